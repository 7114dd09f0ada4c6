//! CSV writers and serializable file formats.
//!
//! Every number is written with 12 significant digits so that reruns can be
//! compared byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::kernels::{to_rows, try_from_rows, Mat};
use crate::lti::{CovariancePack, DataBatch, SamplingVariant};
use crate::sim::{ProtocolBundle, SegmentMetric, TrackingRecord};

/// `v` in scientific notation with 12 significant digits. Negative zero
/// prints as zero.
pub fn fmt_num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.11e}")
}

fn numbered(prefix: &str, count: usize) -> Vec<String> {
    if count == 1 && prefix != "k_" {
        return vec![prefix.trim_end_matches('_').to_string()];
    }
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(w)
}

/// Gain entries in row-major order.
fn gain_entries(k: &Mat) -> impl Iterator<Item = f64> + '_ {
    (0..k.nrows()).flat_map(move |i| (0..k.ncols()).map(move |j| k[(i, j)]))
}

/// Sampled trajectory with header `t,x1..,u1..,y1..`. Columns of `x`, `u`
/// and `y` are samples.
pub fn write_trajectory_csv<W: Write>(out: W, t: &[f64], x: &Mat, u: &Mat, y: &Mat) -> Result<()> {
    for (m, what) in [(x, "state samples"), (u, "input samples"), (y, "output samples")] {
        if m.ncols() != t.len() {
            return Err(Error::dim(what, t.len(), m.ncols()));
        }
    }
    let mut w = writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=x.nrows()).map(|i| format!("x{i}")));
    header.extend((1..=u.nrows()).map(|i| format!("u{i}")));
    header.extend((1..=y.nrows()).map(|i| format!("y{i}")));
    w.write_record(&header)?;
    for (j, tj) in t.iter().enumerate() {
        let mut row = vec![fmt_num(*tj)];
        for m in [x, u, y] {
            row.extend(m.column(j).iter().map(|v| fmt_num(*v)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Tracking record with header `t,<states>,z..,u..,r..` and, when
/// `with_gain` is set, the gain entries `k_1..` in row-major order.
///
/// `state_names` labels the plant states; `x1..` is used when it is empty.
pub fn write_tracking_csv<W: Write>(
    out: W,
    record: &TrackingRecord,
    state_names: &[&str],
    with_gain: bool,
) -> Result<()> {
    let first = &record.samples[0];
    let (n, p, m) = (first.x.len(), first.z.len(), first.u.len());
    if !state_names.is_empty() && state_names.len() != n {
        return Err(Error::dim("state names", n, state_names.len()));
    }
    let mut header = vec!["t".to_string()];
    if state_names.is_empty() {
        header.extend((1..=n).map(|i| format!("x{i}")));
    } else {
        header.extend(state_names.iter().map(|s| s.to_string()));
    }
    header.extend(numbered("z", p));
    header.extend(numbered("u", m));
    header.extend(numbered("r", p));
    if with_gain {
        header.extend(numbered("k_", first.k.len()));
    }
    let mut w = writer(out);
    w.write_record(&header)?;
    for s in &record.samples {
        let mut row = vec![fmt_num(s.t)];
        for v in s.x.iter().chain(s.z.iter()).chain(s.u.iter()).chain(s.r.iter()) {
            row.push(fmt_num(*v));
        }
        if with_gain {
            row.extend(gain_entries(&s.k).map(fmt_num));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Flow trajectory with header `t,cost,grad_norm,k_1..,residual_ratio`.
/// The residual ratio is taken against `k_star`.
pub fn write_flow_csv<W: Write>(out: W, traj: &FlowTrajectory, k_star: &Mat) -> Result<()> {
    let ratios = traj.residual_ratios(k_star);
    let mut header = vec!["t".to_string(), "cost".into(), "grad_norm".into()];
    header.extend(numbered("k_", traj.samples[0].k.len()));
    header.push("residual_ratio".into());
    let mut w = writer(out);
    w.write_record(&header)?;
    for (s, ratio) in traj.samples.iter().zip(&ratios) {
        let mut row = vec![fmt_num(s.t), fmt_num(s.cost), fmt_num(s.grad_norm)];
        row.extend(gain_entries(&s.k).map(fmt_num));
        row.push(fmt_num(*ratio));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Segment metrics of several labelled runs, single-output plants.
pub fn write_metrics_csv<W: Write>(out: W, runs: &[(&str, &[SegmentMetric])]) -> Result<()> {
    let mut w = writer(out);
    w.write_record([
        "controller",
        "start",
        "end",
        "target",
        "peak_deviation",
        "overshoot",
        "final_error",
    ])?;
    for (label, metrics) in runs {
        for m in *metrics {
            let target = m.target.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" ");
            w.write_record([
                label.to_string(),
                fmt_num(m.start),
                fmt_num(m.end),
                target,
                fmt_num(m.peak_deviation),
                fmt_num(m.overshoot),
                fmt_num(m.final_error),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raw experiment matrices, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub variant: SamplingVariant,
    pub dt: f64,
    pub window: Option<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub xp: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl BatchFile {
    pub fn from_batch(b: &DataBatch) -> Self {
        Self {
            variant: b.variant,
            dt: b.dt,
            window: b.window,
            x: to_rows(&b.x),
            u: to_rows(&b.u),
            xp: to_rows(&b.xp),
            y: to_rows(&b.y),
        }
    }

    pub fn to_batch(&self) -> Result<DataBatch> {
        DataBatch::new(
            try_from_rows(&self.x, "X")?,
            try_from_rows(&self.u, "U")?,
            try_from_rows(&self.xp, "X'")?,
            try_from_rows(&self.y, "Y")?,
            self.variant,
            self.dt,
            self.window,
        )
    }
}

/// Sample covariances, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackFile {
    pub samples: usize,
    pub xbar: Vec<Vec<f64>>,
    pub ubar: Vec<Vec<f64>>,
    pub xpbar: Vec<Vec<f64>>,
    pub ybar: Vec<Vec<f64>>,
}

impl PackFile {
    pub fn from_pack(p: &CovariancePack) -> Self {
        Self {
            samples: p.samples,
            xbar: to_rows(&p.xbar),
            ubar: to_rows(&p.ubar),
            xpbar: to_rows(&p.xpbar),
            ybar: to_rows(&p.ybar),
        }
    }

    pub fn to_pack(&self) -> Result<CovariancePack> {
        CovariancePack::new(
            try_from_rows(&self.xbar, "Xbar")?,
            try_from_rows(&self.ubar, "Ubar")?,
            try_from_rows(&self.xpbar, "Xpbar")?,
            try_from_rows(&self.ybar, "Ybar")?,
            self.samples,
        )
    }
}

/// A synthesized gain with the method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainFile {
    pub method: String,
    pub k: Vec<Vec<f64>>,
    pub cost: Option<f64>,
}

impl GainFile {
    pub fn gain(&self) -> Result<Mat> {
        try_from_rows(&self.k, "gain")
    }
}

/// Write the case-study CSVs and summary into `dir`, returning the paths.
///
/// Files: `fig1_tracking.csv`, `fig2_flow_<label>.csv`,
/// `fig3_<label>.csv`, `fig3_metrics.csv` and `summary.txt`.
pub fn write_protocol_bundle(dir: &Path, bundle: &ProtocolBundle) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: String| -> Result<(fs::File, PathBuf)> {
        let path = dir.join(name);
        let f = fs::File::create(&path)?;
        written.push(path.clone());
        Ok((f, path))
    };
    let names = ["v", "i"];
    let (f, _) = create("fig1_tracking.csv".into())?;
    write_tracking_csv(f, &bundle.tracking, &names, false)?;
    for run in &bundle.flows {
        let (f, _) = create(format!("fig2_flow_{}.csv", run.label))?;
        write_flow_csv(f, &run.trajectory, &bundle.k_care)?;
    }
    for run in &bundle.load_runs {
        let (f, _) = create(format!("fig3_{}.csv", run.label))?;
        let adaptive = matches!(run.label.as_str(), "adaptive");
        write_tracking_csv(f, &run.record, &names, adaptive)?;
    }
    let (f, _) = create("fig3_metrics.csv".into())?;
    let runs: Vec<(&str, &[SegmentMetric])> = bundle
        .load_runs
        .iter()
        .map(|r| (r.label.as_str(), r.metrics.as_slice()))
        .collect();
    write_metrics_csv(f, &runs)?;
    let (mut f, _) = create("summary.txt".into())?;
    f.write_all(bundle.summary().as_bytes())?;
    Ok(written)
}
