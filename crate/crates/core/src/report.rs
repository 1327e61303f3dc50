//! Timing-report assembly: per-layer rows grouped by name prefix, with
//! average and combined forward/backward summary rows.

/// Accumulated per-row timing.
pub struct TimeReport {
    pub rows: Vec<TimeRow>,
    pub ave_forward_ms: f64,
    pub ave_backward_ms: f64,
}

pub struct TimeRow {
    pub name: String,
    pub forward_ms: f64,
    pub backward_ms: f64,
}

/// Reporting group of a layer: the name prefix before the first '/', the
/// whole name otherwise (composite blocks share a prefix in the reference
/// nets; flat nets report per layer).
pub fn group_of(layer_name: &str, raw: bool) -> String {
    if raw {
        return layer_name.to_string();
    }
    match layer_name.split_once('/') {
        Some((prefix, _)) => prefix.to_string(),
        None => layer_name.to_string(),
    }
}

/// Aggregates per-layer sums (over all iterations) into grouped averages.
pub fn assemble(
    layer_names: &[String],
    forward_sums: &[f64],
    backward_sums: &[f64],
    iterations: u64,
    raw: bool,
) -> TimeReport {
    let iters = iterations.max(1) as f64;
    let mut rows: Vec<TimeRow> = Vec::new();
    for (i, name) in layer_names.iter().enumerate() {
        let group = group_of(name, raw);
        match rows.iter_mut().find(|r| r.name == group) {
            Some(row) => {
                row.forward_ms += forward_sums[i] / iters;
                row.backward_ms += backward_sums[i] / iters;
            }
            None => rows.push(TimeRow {
                name: group,
                forward_ms: forward_sums[i] / iters,
                backward_ms: backward_sums[i] / iters,
            }),
        }
    }
    let ave_forward_ms = forward_sums.iter().sum::<f64>() / iters;
    let ave_backward_ms = backward_sums.iter().sum::<f64>() / iters;
    TimeReport { rows, ave_forward_ms, ave_backward_ms }
}

impl TimeReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>14} {:>14}\n", "Layer", "Forward (ms)", "Backward (ms)"));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>14.3} {:>14.3}\n",
                row.name, row.forward_ms, row.backward_ms
            ));
        }
        out.push_str(&format!(
            "{:<24} {:>14.3} {:>14.3}\n",
            "Ave.", self.ave_forward_ms, self.ave_backward_ms
        ));
        out.push_str(&format!(
            "{:<24} {:>14.3}\n",
            "Ave. F->B",
            self.ave_forward_ms + self.ave_backward_ms
        ));
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("Layer\tForward (ms)\tBackward (ms)\n");
        for row in &self.rows {
            out.push_str(&format!("{}\t{:.3}\t{:.3}\n", row.name, row.forward_ms, row.backward_ms));
        }
        out.push_str(&format!("Ave.\t{:.3}\t{:.3}\n", self.ave_forward_ms, self.ave_backward_ms));
        out.push_str(&format!("Ave. F->B\t{:.3}\n", self.ave_forward_ms + self.ave_backward_ms));
        out
    }
}
