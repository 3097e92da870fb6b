use serde::{Deserialize, Serialize};

use super::{grade, Grade, GradeTable, ServiceMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLabel {
    pub service: String,
    pub metrics: ServiceMetrics,
    pub grade: Grade,
}

impl PrivacyLabel {
    pub fn new(metrics: ServiceMetrics, table: &GradeTable) -> Self {
        Self { service: metrics.first_party.clone(), grade: grade(&metrics, table), metrics }
    }
}

const WIDTH: usize = 40;

fn row(out: &mut String, name: &str, value: &str) {
    let pad = WIDTH.saturating_sub(name.len() + value.len() + 5);
    out.push_str(&format!("| {name}{} {value} |\n", " ".repeat(pad)));
}

/// Nutrition-label style text box.
pub fn render_label_text(label: &PrivacyLabel) -> String {
    let m = &label.metrics;
    let rule = format!("+{}+\n", "-".repeat(WIDTH - 2));
    let mut out = rule.clone();
    row(&mut out, "PRIVACY LABEL", &format!("Grade {}", label.grade));
    row(&mut out, &label.service, "");
    out.push_str(&rule);
    row(&mut out, "Tracker contacts", &m.tracker_contacts.to_string());
    row(&mut out, "Tracking data", &format!("{} B", m.tracking_bytes));
    row(&mut out, "  share of traffic", &format!("{:.1} %", 100.0 * m.byte_share()));
    row(&mut out, "Tracking time", &format!("{} ms", m.tracking_time_ms));
    row(&mut out, "  share of load time", &format!("{:.1} %", 100.0 * m.time_share()));
    row(&mut out, "Energy", &format!("{:.3} J", m.energy_j));
    out.push_str(&rule);
    out
}

pub fn render_labels_text(labels: &[PrivacyLabel]) -> String {
    labels.iter().map(render_label_text).collect::<Vec<_>>().join("\n")
}
