//! Test-set evaluation, reports and comparison tables.

use std::path::{Path, PathBuf};

use stratavatar_core::metrics::{aligned_positions, evaluate_sequence, MetricRow, CSV_HEADER};
use stratavatar_core::{BodyPartition, EvalReport, KinematicTree, MotionSequence, Vec3};

use crate::chain::Chain;
use crate::corpus::Clip;
use crate::error::{Error, Result};
use crate::plot;

/// Jerk magnitude per frame, averaged over joints and sequences, in the jitter metric's units.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct JitterCurve {
    pub fps: f64,
    pub predicted: Vec<f64>,
    pub unrefined: Vec<f64>,
    pub ground_truth: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub unrefined: EvalReport,
    /// Mean position error per joint over all test frames, centimeters.
    pub per_joint_cm: Vec<f64>,
    pub jitter: JitterCurve,
}

/// Pose-isolated metrics of predicted against ground-truth sequences.
pub fn score(
    pairs: &[(&str, &MotionSequence<f64>, &MotionSequence<f64>)],
    tree: &KinematicTree<f64>,
    partition: &BodyPartition,
) -> Result<EvalReport> {
    let rows = pairs.iter().map(|(n, p, g)| evaluate_sequence(n, p, g, tree, partition)).collect::<std::result::Result<_, _>>()?;
    Ok(EvalReport::from_sequences(rows)?)
}

/// Per-frame jerk magnitudes `|p[t+3] - 3p[t+2] + 3p[t+1] - p[t]|·f³ / 100`, mean over joints.
pub fn jerk_per_frame(pos: &[Vec<Vec3<f64>>], fps: f64) -> Vec<f64> {
    let scale = fps.powi(3) / 100.0;
    pos.windows(4)
        .map(|w| {
            let joints = w[0].len();
            (0..joints).map(|j| (w[3][j] - w[2][j].scale(3.0) + w[1][j].scale(3.0) - w[0][j]).norm() * scale).sum::<f64>() / joints as f64
        })
        .collect()
}

fn accumulate(acc: &mut Vec<(f64, usize)>, values: &[f64]) {
    if acc.len() < values.len() {
        acc.resize(values.len(), (0.0, 0));
    }
    for (a, v) in acc.iter_mut().zip(values) {
        a.0 += v;
        a.1 += 1;
    }
}

fn means(acc: &[(f64, usize)]) -> Vec<f64> {
    acc.iter().map(|(s, n)| s / *n as f64).collect()
}

/// Runs the chain on every clip and scores refined and unrefined outputs.
pub fn evaluate(chain: &Chain, clips: &[Clip], seed: u64, partition: &BodyPartition) -> Result<EvalOutput> {
    if clips.is_empty() {
        return Err(Error::Config("no test clips to evaluate".into()));
    }
    let tree = &chain.tree;
    let preds = clips.iter().map(|c| chain.infer(&c.obs, seed)).collect::<Result<Vec<_>>>()?;
    let refined: Vec<_> = clips.iter().zip(&preds).map(|(c, p)| (c.name.as_str(), &p.refined, &c.motion)).collect();
    let unrefined: Vec<_> = clips.iter().zip(&preds).map(|(c, p)| (c.name.as_str(), &p.unrefined, &c.motion)).collect();
    let report = score(&refined, tree, partition)?;
    let unrefined_report = score(&unrefined, tree, partition)?;

    let mut joint_err = vec![0.0; tree.len()];
    let mut frames = 0usize;
    let (mut jp, mut ju, mut jg) = (Vec::new(), Vec::new(), Vec::new());
    let fps = clips[0].motion.fps;
    for (c, p) in clips.iter().zip(&preds) {
        let (pp, gp) = aligned_positions(&p.refined, &c.motion, tree)?;
        for (pf, gf) in pp.iter().zip(&gp) {
            for (j, e) in joint_err.iter_mut().enumerate() {
                *e += (pf[j] - gf[j]).norm();
            }
        }
        frames += pp.len();
        let (up, _) = aligned_positions(&p.unrefined, &c.motion, tree)?;
        accumulate(&mut jp, &jerk_per_frame(&pp, c.motion.fps));
        accumulate(&mut ju, &jerk_per_frame(&up, c.motion.fps));
        accumulate(&mut jg, &jerk_per_frame(&gp, c.motion.fps));
    }
    Ok(EvalOutput {
        report,
        unrefined: unrefined_report,
        per_joint_cm: joint_err.iter().map(|e| 100.0 * e / frames as f64).collect(),
        jitter: JitterCurve { fps, predicted: means(&jp), unrefined: means(&ju), ground_truth: means(&jg) },
    })
}

/// Labelled metric rows under the fixed column schema.
pub fn comparison_csv(rows: &[(String, MetricRow)]) -> String {
    let mut out = format!("variant,{}\n", CSV_HEADER.join(","));
    for (label, row) in rows {
        let values: Vec<String> = row.values().iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("{label},{}\n", values.join(",")));
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the report (JSON and CSV), the unrefined report, the jitter curves
/// and both plots into `dir`; returns the written paths.
pub fn write_outputs(out: &EvalOutput, tree: &KinematicTree<f64>, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![
        write(dir.join("report.json"), &out.report.to_json())?,
        write(dir.join("report.csv"), &out.report.to_csv()?)?,
        write(dir.join("report_unrefined.csv"), &out.unrefined.to_csv()?)?,
        write(dir.join("jitter_curve.json"), &serde_json::to_string_pretty(&out.jitter)?)?,
    ];
    let rows = vec![("refined".to_string(), out.report.aggregate), ("unrefined".to_string(), out.unrefined.aggregate)];
    written.push(write(dir.join("refiner_comparison.csv"), &comparison_csv(&rows))?);
    let bars = dir.join("per_joint_error.svg");
    plot::per_joint_bars(&bars, tree.joint_names(), &out.per_joint_cm)?;
    written.push(bars);
    let curves = dir.join("jitter_over_time.svg");
    plot::jitter_curves(&curves, &out.jitter)?;
    written.push(curves);
    Ok(written)
}
