//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the summary is always printed. An
//! optional argument filters criteria by substring, e.g.
//! `cargo test -p stratavatar-pipeline --test acceptance -- rotation`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stratavatar_core::dataset::synthetic::{generate_sequence, MotionStyle};
use stratavatar_core::dataset::{generate_synthetic, split, MotionFile, SyntheticConfig};
use stratavatar_core::kinematics::fk_pose;
use stratavatar_core::metrics::{jitter_of_positions, CSV_HEADER, MetricRow};
use stratavatar_core::schedule::{sample, Denoiser};
use stratavatar_core::{
    BodyPartition, KinematicTree, LatentPart, Mat3, MotionCodebook, MotionSequence, NoiseSchedule, Pose, Rotation6D,
    Vec3,
};
use stratavatar_models::data::{rotation_tensor, stack_windows};
use stratavatar_models::geometry::{jitter_loss, mean_distance, scalar, TensorSkeleton};
use stratavatar_models::init::seeded_builder;
use stratavatar_models::vqvae::{gather_part, straight_through, train_vqvae};
use stratavatar_models::{VqVae, VqVaeConfig};
use stratavatar_pipeline::ablate::{run_ablation, Ablation};
use stratavatar_pipeline::chain::Decoding;
use stratavatar_pipeline::eval::score;
use stratavatar_pipeline::{evaluate, Clip, Run, RunConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniformly random rotation from a normalized Gaussian quaternion, row-major.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: [f64; 4] = std::array::from_fn(|_| normal(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

type Homogeneous = [[f64; 4]; 4];

fn homogeneous(r: &[[f64; 3]; 3], t: [f64; 3]) -> Homogeneous {
    let mut m = [[0.0; 4]; 4];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
        m[i][3] = t[i];
    }
    m[3][3] = 1.0;
    m
}

fn compose(a: &Homogeneous, b: &Homogeneous) -> Homogeneous {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

fn fk_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=40usize);
        let parents: Vec<Option<usize>> = (0..n).map(|j| (j > 0).then(|| rng.random_range(0..j))).collect();
        let offsets: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
        let rots: Vec<[[f64; 3]; 3]> = (0..n).map(|_| random_rotation(&mut rng)).collect();
        let root: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));

        let tree = KinematicTree::new(
            (0..n).map(|j| format!("j{j}")).collect(),
            parents.clone(),
            offsets.iter().map(|o| Vec3::new(o[0], o[1], o[2])).collect(),
        )
        .map_err(|e| e.to_string())?;
        let pose = Pose::new(
            rots.iter().map(|r| Rotation6D::from_matrix(&Mat3(*r)).expect("rotation")).collect(),
            Vec3::new(root[0], root[1], root[2]),
        );
        let got = fk_pose(&pose, &tree).map_err(|e| e.to_string())?;

        let mut world: Vec<Homogeneous> = Vec::with_capacity(n);
        for j in 0..n {
            let m = match parents[j] {
                None => homogeneous(&rots[j], root),
                Some(p) => compose(&world[p], &homogeneous(&rots[j], offsets[j])),
            };
            world.push(m);
            for (i, row) in m.iter().take(3).enumerate() {
                worst = worst.max((got.positions[j][i] - row[3]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-9 && secs < 10.0, format!("max position error {worst:.2e} m, {secs:.2} s"))
}

fn rotation_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_trip = 0.0f64;
    let mut worst_ortho = 0.0f64;
    for _ in 0..100_000 {
        let r = random_rotation(&mut rng);
        let back = Rotation6D::from_matrix(&Mat3(r)).and_then(|s| s.to_matrix()).map_err(|e| e.to_string())?;
        let frob = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (r[i][j] - back.0[i][j]).powi(2)).sum::<f64>();
        worst_trip = worst_trip.max(frob.sqrt());

        let raw = Rotation6D::new(std::array::from_fn(|_| normal(&mut rng)));
        let m = raw.to_matrix().map_err(|e| e.to_string())?.0;
        for i in 0..3 {
            for j in 0..3 {
                let gram: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                worst_ortho = worst_ortho.max((gram - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        worst_ortho = worst_ortho.max((det - 1.0).abs());
    }
    check(
        worst_trip < 1e-6 && worst_ortho < 1e-9,
        format!("round-trip Frobenius {worst_trip:.2e}, orthonormality {worst_ortho:.2e}"),
    )
}

fn brute_force_argmin(codebook: &[f64], dim: usize, q: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, entry) in codebook.chunks(dim).enumerate() {
        let d: f64 = entry.iter().zip(q).map(|(c, x)| (c - x) * (c - x)).sum();
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

fn quantizer_equivalence() -> Outcome {
    let (size, dim) = (512, 384);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut entries: Vec<f64> = (0..size * dim).map(|_| normal(&mut rng)).collect();
    // Exact duplicates exercise the lowest-index tie-break.
    for i in 0..32 {
        let src = entries[7 * i * dim..(7 * i + 1) * dim].to_vec();
        entries[(480 + i) * dim..(481 + i) * dim].copy_from_slice(&src);
    }
    let book = MotionCodebook::new(dim, entries.clone()).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    let mut ties = 0;
    for k in 0..10_000 {
        let q: Vec<f64> = if k % 100 == 0 {
            ties += 1;
            let j = 7 * (k / 100 % 32);
            entries[j * dim..(j + 1) * dim].iter().map(|v| v + 1e-3 * normal(&mut rng)).collect()
        } else {
            (0..dim).map(|_| normal(&mut rng)).collect()
        };
        if book.quantize(&q).0 != brute_force_argmin(&entries, dim, &q) {
            mismatches += 1;
        }
    }

    // Tensor quantizer of a model built at the same shape, in double precision.
    let dev = Device::Cpu;
    let (_store, vb) = seeded_builder(5, DType::F64, &dev);
    let cfg = VqVaeConfig { width: 16, heads: 2, ff: 32, layers: 1, latent_dim: dim, codebook_size: size, ..Default::default() };
    let model = VqVae::new(cfg, LatentPart::Upper, &KinematicTree::smpl(), &BodyPartition::smpl(), vb).map_err(|e| e.to_string())?;
    let cb = model.codebook().flatten_all().and_then(|t| t.to_vec1::<f64>()).map_err(|e| e.to_string())?;
    let queries: Vec<f64> = (0..10_000 * dim).map(|_| normal(&mut rng) * 0.1).collect();
    let h = Tensor::from_vec(queries.clone(), (100, 100, dim), &dev).map_err(|e| e.to_string())?;
    let (_, idx) = model.quantize(&h).map_err(|e| e.to_string())?;
    let tensor_mismatches =
        idx.iter().enumerate().filter(|(i, &j)| brute_force_argmin(&cb, dim, &queries[i * dim..(i + 1) * dim]) != j as usize).count();
    check(
        mismatches == 0 && tensor_mismatches == 0,
        format!("{mismatches} codebook and {tensor_mismatches} tensor mismatches over 10^4 queries ({ties} near-tie queries)"),
    )
}

fn straight_through_gradient() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dim = 5;
    let mat = |rows: usize, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..rows * dim).map(|_| 0.5 * normal(rng)).collect() };
    let w_dec = mat(7, &mut rng);
    let weights: Vec<f64> = (0..7).map(|_| normal(&mut rng)).collect();
    let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let w_enc = mat(dim, &mut rng);
    let codebook: Vec<f64> = (0..8 * dim).map(|_| normal(&mut rng)).collect();

    // Encoder in plain arithmetic; the tensor graph starts at the pre-quantization latent.
    let h: Vec<f64> = (0..dim).map(|i| (0..dim).map(|k| w_enc[i * dim + k] * x[k]).sum::<f64>().tanh()).collect();
    let j = brute_force_argmin(&codebook, dim, &h);
    let z = codebook[j * dim..(j + 1) * dim].to_vec();

    let loss_at = |input: &Tensor| -> candle_core::Result<Tensor> {
        let wd = Tensor::from_vec(w_dec.clone(), (7, dim), &dev)?;
        let out = wd.matmul(&input.unsqueeze(1)?)?.squeeze(1)?.tanh()?;
        let w = Tensor::from_vec(weights.clone(), 7, &dev)?;
        (out.sqr()? * w)?.sum_all()
    };
    let run = || -> candle_core::Result<(Vec<f64>, Vec<f64>)> {
        let hv = Var::from_vec(h.clone(), dim, &dev)?;
        let zt = Tensor::from_vec(z.clone(), dim, &dev)?;
        let loss = loss_at(&straight_through(hv.as_tensor(), &zt).map_err(|e| candle_core::Error::Msg(e.to_string()))?)?;
        let analytic = loss.backward()?.get(hv.as_tensor()).expect("gradient reaches h").to_vec1::<f64>()?;
        let eps = 1e-6;
        let fd = (0..dim)
            .map(|i| {
                let shifted = |s: f64| -> candle_core::Result<f64> {
                    let mut v = z.clone();
                    v[i] += s;
                    loss_at(&Tensor::from_vec(v, dim, &dev)?)?.to_scalar::<f64>()
                };
                Ok((shifted(eps)? - shifted(-eps)?) / (2.0 * eps))
            })
            .collect::<candle_core::Result<Vec<f64>>>()?;
        Ok((analytic, fd))
    };
    let (analytic, fd) = run().map_err(|e| e.to_string())?;
    let diff = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rel = diff / scale.max(1e-12);
    let moved = h.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(rel < 1e-4 && moved > 1e-3, format!("relative gradient error {rel:.2e} (|h - z|max {moved:.3})"))
}

fn schedule_properties() -> Outcome {
    let s = NoiseSchedule::<f64>::cosine(1000).map_err(|e| e.to_string())?;
    let ab = s.alpha_bars();
    let decreasing = ab.windows(2).all(|w| w[1] < w[0]);
    let betas_ok = (1..=1000).all(|k| s.beta(k) > 0.0 && s.beta(k) <= 0.999);
    check(
        decreasing && ab[0] == 1.0 && ab[1000] < 1e-3 && betas_ok,
        format!("ᾱ_0 = {}, ᾱ_1000 = {:.2e}, strictly decreasing {decreasing}, betas in range {betas_ok}", ab[0], ab[1000]),
    )
}

struct FixedDenoiser(Vec<f64>);

impl Denoiser for FixedDenoiser {
    type Latent = Vec<f64>;
    type Error = stratavatar_core::Error;

    fn predict_x0(&mut self, _z: &Vec<f64>, _step: usize) -> Result<Vec<f64>, Self::Error> {
        Ok(self.0.clone())
    }

    fn combine(&self, a: f64, x: &Vec<f64>, b: f64, y: &Vec<f64>) -> Result<Vec<f64>, Self::Error> {
        Ok(x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
    }
}

fn sampler_fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let target: Vec<f64> = (0..10 * 32).map(|_| normal(&mut rng)).collect();
    let schedule = NoiseSchedule::<f64>::cosine(1000).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for steps in [1, 5, 50] {
        let noise: Vec<f64> = (0..target.len()).map(|_| normal(&mut rng)).collect();
        let out = sample(&mut FixedDenoiser(target.clone()), &schedule, noise, steps).map_err(|e| e.to_string())?;
        worst = worst.max(out.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst < 1e-6, format!("max deviation {worst:.2e} over S = 1, 5, 50"))
}

fn jitter_closed_forms() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (fps, frames, joints) = (30.0, 30, 6);
    let coeffs: Vec<[[f64; 3]; 3]> =
        (0..joints).map(|_| std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(-0.25..0.25)))).collect();
    let quad: Vec<Vec<Vec3<f64>>> = (0..frames)
        .map(|i| {
            let t = i as f64 / fps;
            coeffs.iter().map(|[c, v, a]| Vec3(std::array::from_fn(|k| c[k] + v[k] * t + 0.5 * a[k] * t * t))).collect()
        })
        .collect();
    let cubic: Vec<Vec<Vec3<f64>>> = (0..frames).map(|i| vec![Vec3::new((i as f64).powi(3), 0.0, 0.0)]).collect();
    let as_tensor = |pos: &[Vec<Vec3<f64>>]| -> candle_core::Result<Tensor> {
        let flat: Vec<f64> = pos.iter().flatten().flat_map(|p| p.0).collect();
        Tensor::from_vec(flat, (1, pos.len(), pos[0].len(), 3), &dev)
    };
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let metric_quad = jitter_of_positions(&quad, fps).map_err(|e| err(&e))?;
    let loss_quad = as_tensor(&quad).map_err(|e| err(&e)).and_then(|t| jitter_loss(&t, fps).map_err(|e| err(&e)))?;
    let loss_quad = scalar(&loss_quad).map_err(|e| err(&e))?;
    // Third difference of t³ on unit steps is 6.
    let want_loss = 6.0 * fps.powi(3);
    let want_metric = want_loss / 100.0;
    let metric_cubic = jitter_of_positions(&cubic, fps).map_err(|e| err(&e))?;
    let loss_cubic = as_tensor(&cubic).map_err(|e| err(&e)).and_then(|t| jitter_loss(&t, fps).map_err(|e| err(&e)))?;
    let loss_cubic = scalar(&loss_cubic).map_err(|e| err(&e))?;
    let rel_metric = (metric_cubic - want_metric).abs() / want_metric;
    let rel_loss = (loss_cubic - want_loss).abs() / want_loss;
    check(
        metric_quad.abs() < 1e-10 && loss_quad.abs() < 1e-10 && rel_metric < 1e-9 && rel_loss < 1e-9,
        format!(
            "constant acceleration: metric {metric_quad:.1e}, loss {loss_quad:.1e}; cubic relative error: metric {rel_metric:.1e}, loss {rel_loss:.1e}"
        ),
    )
}

fn vq_overfit() -> Outcome {
    let start = Instant::now();
    let dev = Device::Cpu;
    let tree = KinematicTree::smpl();
    let partition = BodyPartition::smpl();
    let desk = RunConfig::desk();
    let window = desk.model.window;
    let seq = generate_sequence(MotionStyle::Walk, 200, 60.0, 1);
    let rot = rotation_tensor(&seq, DType::F32, &dev).map_err(|e| e.to_string())?;
    let train = stack_windows(std::slice::from_ref(&rot), window, 1).map_err(|e| e.to_string())?;
    let tiles = stack_windows(&[rot], window, window).map_err(|e| e.to_string())?;
    let cfg = desk.vq_config();
    let tc = stratavatar_models::TrainConfig { holdout: 0.0, ..desk.vqvae.train.clone() };
    let fit = |part, seed| train_vqvae(&train, part, &cfg, &tc, &tree, &partition, seed).map_err(|e| e.to_string());
    let (upper, lower) = (fit(LatentPart::Upper, 1)?, fit(LatentPart::Lower, 2)?);
    let steps = upper.log.steps.len() + lower.log.steps.len();
    let latents = [&upper.model, &lower.model]
        .iter()
        .map(|m| gather_part(&tiles, m.joints()).and_then(|x| m.latents(&x)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let recon = Decoding::parts(upper.model, lower.model, &partition).decode(&latents).map_err(|e| e.to_string())?;
    let sk = TensorSkeleton::new(&tree, DType::F32, &dev).map_err(|e| e.to_string())?;
    let err = sk
        .positions(&recon)
        .and_then(|p| mean_distance(&p, &sk.positions(&tiles)?))
        .and_then(|d| scalar(&d))
        .map_err(|e| e.to_string())?;
    let cm = err * 100.0;
    let secs = start.elapsed().as_secs_f64();
    check(cm < 1.0 && secs < 300.0, format!("reconstruction MPJPE {cm:.3} cm after {steps} steps over both parts, {secs:.0} s"))
}

/// Results of the staged toy experiment shared by criteria 9–11.
struct ToyExperiment {
    root: PathBuf,
    seeds: Vec<u64>,
    refined: Vec<MetricRow>,
    unrefined: Vec<MetricRow>,
    /// Lower-body comparison rows, both decoded by the part VQ decoders.
    stratified: Vec<MetricRow>,
    parallel: Vec<MetricRow>,
    baseline: MetricRow,
    elapsed: Duration,
    test: Vec<Clip>,
}

static TOY: OnceLock<Result<ToyExperiment, String>> = OnceLock::new();

fn toy_experiment() -> Result<&'static ToyExperiment, String> {
    TOY.get_or_init(|| run_toy_experiment().map_err(|e| e.to_string())).as_ref().map_err(Clone::clone)
}

fn scratch_dir() -> PathBuf {
    std::env::var_os("STRATAVATAR_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("stratavatar-acceptance-{}", std::process::id())))
}

fn run_toy_experiment() -> Result<ToyExperiment, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let base = RunConfig::desk();
    let tree = KinematicTree::smpl();
    let partition = BodyPartition::smpl();
    let synth = &base.data.synthetic;
    let corpus = generate_synthetic(&SyntheticConfig::new(synth.sequences, synth.frames, synth.fps, synth.seed), &tree)?;
    let names: Vec<String> = corpus.iter().map(|(n, _)| n.clone()).collect();
    let manifest = split(&names, base.data.train_ratio, base.data.split_seed)?;
    let tracked = base.tracked();
    let clips = corpus
        .iter()
        .map(|(name, file)| Clip::new(name.clone(), file.to_sequence::<f64>()?, &tree, &tracked))
        .collect::<Result<Vec<_>, _>>()?;
    let pick = |want: &[String]| -> Vec<Clip> { clips.iter().filter(|c| want.contains(&c.name)).cloned().collect() };
    let (train, test) = (pick(&manifest.train), pick(&manifest.test));

    // Constant pose: per-joint mean of training rotations, re-orthonormalized.
    let joints = tree.len();
    let mut sum = vec![[0.0; 6]; joints];
    for pose in train.iter().flat_map(|c| &c.motion.frames) {
        for (acc, r) in sum.iter_mut().zip(&pose.local_rotations) {
            acc.iter_mut().zip(r.values).for_each(|(a, v)| *a += v);
        }
    }
    let mean_pose: Vec<Rotation6D<f64>> = sum
        .iter()
        .map(|s| Ok(Rotation6D::from_matrix_unchecked(&Rotation6D::new(*s).to_matrix()?)))
        .collect::<Result<_, stratavatar_core::Error>>()?;
    let constant: Vec<MotionSequence<f64>> = test
        .iter()
        .map(|c| {
            let frames = c.motion.frames.iter().map(|p| Pose::new(mean_pose.clone(), p.root_translation)).collect();
            MotionSequence::new(frames, c.motion.fps)
        })
        .collect::<Result<_, _>>()?;
    let pairs: Vec<_> = test.iter().zip(&constant).map(|(c, p)| (c.name.as_str(), p, &c.motion)).collect();
    let baseline = score(&pairs, &tree, &partition)?.aggregate;

    let root = scratch_dir();
    let seeds = vec![0, 1, 2];
    let (mut refined, mut unrefined) = (Vec::new(), Vec::new());
    let (mut stratified, mut parallel) = (Vec::new(), Vec::new());
    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.seeds.train = seed;
        let run = Run::with_root(cfg, root.join(format!("seed-{seed}"))).with_clips(train.clone(), test.clone());
        run.train_all()?;
        let out = evaluate(&run.chain()?, &test, run.config.seeds.infer, &partition)?;
        refined.push(out.report.aggregate);
        unrefined.push(out.unrefined.aggregate);
        let ablation = run_ablation(&run, Ablation::Conditioning, &run.root.join("ablation"))?;
        stratified.push(ablation.rows[0].1);
        parallel.push(ablation.rows[1].1);
        eprintln!(
            "  seed {seed}: MPJPE {:.3} | Lower PE stratified {:.3} parallel {:.3} | Jitter refined {:.3} unrefined {:.3} ({:.0} s)",
            refined.last().unwrap().mpjpe,
            stratified.last().unwrap().lower_pe,
            parallel.last().unwrap().lower_pe,
            refined.last().unwrap().jitter,
            unrefined.last().unwrap().jitter,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(ToyExperiment { root, seeds, refined, unrefined, stratified, parallel, baseline, elapsed: start.elapsed(), test })
}

fn mean_of(rows: &[MetricRow], f: impl Fn(&MetricRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

fn end_to_end() -> Outcome {
    let toy = toy_experiment()?;
    let mpjpe = mean_of(&toy.refined, |r| r.mpjpe);
    let gain = 1.0 - mpjpe / toy.baseline.mpjpe;
    let lower_strat = mean_of(&toy.stratified, |r| r.lower_pe);
    let lower_par = mean_of(&toy.parallel, |r| r.lower_pe);
    let minutes = toy.elapsed.as_secs_f64() / 60.0;
    check(
        gain >= 0.30 && lower_strat <= lower_par && minutes < 45.0,
        format!(
            "MPJPE {mpjpe:.2} cm vs constant-pose {:.2} cm ({:.0}% better); Lower PE stratified {lower_strat:.3} vs parallel {lower_par:.3}; {minutes:.1} min",
            toy.baseline.mpjpe,
            100.0 * gain
        ),
    )
}

fn refiner_effect() -> Outcome {
    let toy = toy_experiment()?;
    let refined = mean_of(&toy.refined, |r| r.jitter);
    let unrefined = mean_of(&toy.unrefined, |r| r.jitter);
    check(refined <= unrefined, format!("Jitter refined {refined:.4} vs unrefined {unrefined:.4} over {} seeds", toy.seeds.len()))
}

fn online_contract() -> Outcome {
    let toy = toy_experiment()?;
    let mut cfg = RunConfig::desk();
    cfg.seeds.train = toy.seeds[0];
    let run = Run::with_root(cfg, toy.root.join(format!("seed-{}", toy.seeds[0])));
    let chain = run.chain().map_err(|e| e.to_string())?;
    let obs = &toy.test[0].obs;
    let seed = run.config.seeds.infer;
    let full = chain.infer_online(obs, seed).map_err(|e| e.to_string())?;
    let again = chain.infer_online(obs, seed).map_err(|e| e.to_string())?;
    let cut = obs.len() / 2;
    let prefix = chain.infer_online(&obs.slice(0, cut), seed).map_err(|e| e.to_string())?;
    let batched = chain.infer(obs, seed).map_err(|e| e.to_string())?;

    let length_ok = full.motion.len() == obs.len() && full.latency.len() == obs.len();
    let deterministic = full.motion.frames == again.motion.frames;
    let causal = prefix.motion.frames[..] == full.motion.frames[..cut];
    let batch_gap = full
        .motion
        .frames
        .iter()
        .zip(&batched.refined.frames)
        .flat_map(|(a, b)| a.local_rotations.iter().zip(&b.local_rotations).flat_map(|(x, y)| x.values.iter().zip(y.values)))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let stats = stratavatar_pipeline::LatencyStats::from_durations(&full.latency);
    let reported = full.latency.iter().all(|d| *d > Duration::ZERO);
    check(
        length_ok && deterministic && causal && reported,
        format!(
            "{} frames in/out, causal {causal}, deterministic {deterministic}, batched max gap {batch_gap:.1e}; latency mean {:.2} ms, p95 {:.2} ms",
            obs.len(),
            stats.mean_ms,
            stats.p95_ms
        ),
    )
}

fn format_round_trips() -> Outcome {
    let tree = KinematicTree::smpl();
    let seq = generate_sequence(MotionStyle::Reach, 90, 60.0, 3);
    let file = MotionFile::from_sequence(&seq, &tree).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("clip.samf");
    file.write(&path).map_err(|e| e.to_string())?;
    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    let back = MotionFile::read(&path).map_err(|e| e.to_string())?;
    let bits_equal = back.fps.to_bits() == file.fps.to_bits()
        && back.skeleton_hash == file.skeleton_hash
        && back.payload.len() == file.payload.len()
        && back.payload.iter().zip(&file.payload).all(|(a, b)| a.to_bits() == b.to_bits());
    let bytes_equal = on_disk == file.to_bytes() && back.to_bytes() == on_disk;

    let gt = file.to_sequence::<f64>().map_err(|e| e.to_string())?;
    let report = score(&[("clip", &gt, &gt)], &tree, &BodyPartition::smpl()).map_err(|e| e.to_string())?;
    let csv = report.to_csv().map_err(|e| e.to_string())?;
    let header = csv.lines().next().unwrap_or_default();
    let want = "MPJRE,MPJPE,MPJVE,Hand PE,Upper PE,Lower PE,Root PE,Jitter";
    check(
        bits_equal && bytes_equal && header == want && CSV_HEADER.join(",") == want,
        format!("binary bit-exact {}, header `{header}`", bits_equal && bytes_equal),
    )
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 12] = [
        ("FK oracle equivalence", fk_oracle),
        ("rotation round-trip", rotation_round_trip),
        ("quantizer equivalence", quantizer_equivalence),
        ("straight-through gradient", straight_through_gradient),
        ("schedule properties", schedule_properties),
        ("sampler fixed point", sampler_fixed_point),
        ("jitter closed forms", jitter_closed_forms),
        ("VQ-VAE overfit", vq_overfit),
        ("end-to-end toy experiment", end_to_end),
        ("refiner effect", refiner_effect),
        ("online inference contract", online_contract),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}: {name}", i + 1);
        if filter.as_ref().is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {label} | {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label} | {detail} [{secs:.1} s]");
            }
        }
    }
    if let Some(Ok(toy)) = TOY.get() {
        if std::env::var_os("STRATAVATAR_ACCEPTANCE_DIR").is_none() {
            let _ = std::fs::remove_dir_all(&toy.root);
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
