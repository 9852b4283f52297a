use super::{LatencyReport, SuccessReport};

pub struct LatencyRow {
    pub component: String,
    pub protocol: String,
    pub report: LatencyReport,
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)) + "\n";
    let mut out = line(header.to_vec());
    out.push_str(&rule);
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Component / Protocol / Min / Max / Mean, in ms.
pub fn latency_table(rows: &[LatencyRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.component.clone(),
                r.protocol.clone(),
                format!("{:.2}", r.report.min),
                format!("{:.2}", r.report.max),
                format!("{:.2}", r.report.mean),
            ]
        })
        .collect();
    render(&["Component", "Protocol", "Min", "Max", "Mean"], &body)
}

/// Metric / Min / Max / Std Dev / Mean for the video stream.
pub fn stream_table(latency_ms: &LatencyReport, bitrate_mbps: &LatencyReport, fps: f64) -> String {
    let row = |name: &str, r: &LatencyReport| {
        vec![
            name.to_string(),
            format!("{:.3}", r.min),
            format!("{:.3}", r.max),
            format!("{:.3}", r.std),
            format!("{:.3}", r.mean),
        ]
    };
    let mut out = render(
        &["Metric", "Min", "Max", "Std Dev", "Mean"],
        &[row("Latency (ms)", latency_ms), row("Bitrate (Mbps)", bitrate_mbps)],
    );
    out.push_str(&format!("Frame Rate (fps)  {fps}\nTransport         UDP\n"));
    out
}

pub struct ComparisonRow<'a> {
    pub method: String,
    pub report: &'a SuccessReport,
}

/// Method / APE per drone (cm) / FPS / Success Rate / Communication.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let drones = rows.iter().map(|r| r.report.outcomes.first().map_or(0, |o| o.ape_rmse.len())).max().unwrap_or(0);
    let mut header: Vec<String> = vec!["Method".into()];
    header.extend((1..=drones).map(|d| format!("APE UAV{d} (cm)")));
    header.extend(["FPS".into(), "Success Rate".into(), "Communication".into()]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.method.clone()];
            for d in 0..drones {
                cells.push(r.report.mean_ape(d).map_or("Fail".to_string(), |a| format!("{:.2}", a * 100.0)));
            }
            let fps = if drones > 0 { (0..drones).map(|d| r.report.mean_fix_rate(d)).sum::<f64>() / drones as f64 } else { 0.0 };
            cells.push(format!("{fps:.2}x{drones}"));
            cells.push(format!("{:.0}%", r.report.success_rate * 100.0));
            cells.push(format!("{:.2} Mbps", r.report.mean_bitrate()));
            cells
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    render(&header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::latency_stats;

    #[test]
    fn latency_layout() {
        let rows = vec![
            LatencyRow { component: "wired".into(), protocol: "UDP/Ethernet".into(), report: latency_stats(&[0.15, 1.75]).unwrap() },
            LatencyRow { component: "wireless".into(), protocol: "UDP/Wi-Fi".into(), report: latency_stats(&[4.14, 66.3]).unwrap() },
        ];
        let t = latency_table(&rows);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Component"));
        assert!(lines[3].ends_with("35.22"));
    }

    #[test]
    fn stream_layout() {
        let lat = latency_stats(&[100.0, 200.0]).unwrap();
        let br = latency_stats(&[2.0, 3.0]).unwrap();
        let t = stream_table(&lat, &br, 30.0);
        assert!(t.contains("Std Dev"));
        assert!(t.lines().nth(2).unwrap().ends_with("150.000"));
    }
}
