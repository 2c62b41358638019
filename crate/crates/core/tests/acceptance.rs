//! Acceptance suite. Prints one `PASS`, `FAIL` or `SKIP` line per criterion.
//!
//! Criteria 1, 2, 12 and the write-count invariant of 6 run here. The
//! training criteria read finished runs of `experiments/*.cfg` from
//! `$FASTMAP_RUNS` (default `<workspace>/runs`) and are skipped when a run is
//! missing. A skipped or failed training criterion fails the test only with
//! `FASTMAP_ACCEPTANCE_STRICT=1`; the fast criteria always do.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fastmap::agent::{Agent, AgentConfig, Arch};
use fastmap::encdec::{EncDecConfig, LanguageDecoder, VisionDecoder};
use fastmap::envsim::{Env, Regime, TaskSpec, Vocab, World, WorldConfig};
use fastmap::harness::{evaluate_probe, run_experiment, run_oracle, ExperimentConfig, OracleTask, Probe, ProbeSpec};
use fastmap::learner::{collect_rollout, compute_targets, replay, total_loss, vtrace, Actor, LossWeights};
use fastmap::memory::{ngu_reward, top_k, NguConfig, NguStats};
use fastmap::numerics::gradcheck::{check_params, sample_coords};
use fastmap::numerics::{NumericsError, ParamSet, Real, Tape, Tensor};

const NGU_TOL: Real = 1e-9;
const NGU_INPUTS: usize = 1000;
const EXACT_TOL: Real = 1e-9;
const GRAD_TOL: Real = 1e-4;
const FORMULA_BUDGET: Duration = Duration::from_secs(120);

const SCRIPTED_EPISODES: usize = 10_000;
const ORACLE_MIN: Real = 0.99;
const RANDOM_TOL: Real = 0.02;
const SCRIPTED_BUDGET: Duration = Duration::from_secs(300);

const PROBE_EPISODES: usize = 1000;
const SELECTIVE_WINDOW: usize = 3;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: &'static str,
    status: Status,
    detail: String,
    long: bool,
}

fn verdict(id: &'static str, ok: bool, detail: String, long: bool) -> Line {
    Line { id, status: if ok { Status::Pass } else { Status::Fail }, detail, long }
}

fn skip(id: &'static str, detail: String) -> Line {
    Line { id, status: Status::Skip, detail, long: true }
}

// ---- criterion 1 -------------------------------------------------------

fn ngu_oracle(rows: &[Vec<Real>], e: &[Real], mean: Real) -> Real {
    let (c, eps, rho_min, s_max, k) = (1e-3, 1e-4, 8e-3, 2.0, 10);
    if rows.len() < k {
        return 0.0;
    }
    let mut d: Vec<Real> = rows.iter().map(|r| r.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let sum: Real = d[..k].iter().map(|di| eps / (Real::max(di / (mean + c) - rho_min, 0.0) + eps)).sum();
    let s = sum.sqrt() + c;
    if s < s_max {
        1.0 / s
    } else {
        0.0
    }
}

fn check_ngu(rng: &mut ChaCha8Rng) -> Result<Real, String> {
    let mut worst: Real = 0.0;
    let mut nonzero = 0;
    for _ in 0..NGU_INPUTS {
        let dim = rng.random_range(1..12);
        let n = rng.random_range(0..40);
        let spread = rng.random_range(0.01..2.0);
        let rows: Vec<Vec<Real>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-spread..spread)).collect()).collect();
        let e: Vec<Real> = (0..dim).map(|_| rng.random_range(-spread..spread)).collect();
        let mut stats = NguStats { mean: rng.random_range(0.0..3.0), count: rng.random_range(1..100) };
        let expect = ngu_oracle(&rows, &e, stats.mean);
        let got = ngu_reward(rows.iter().map(Vec::as_slice), &e, &mut stats, &NguConfig::default()).map_err(|e| e.to_string())?;
        nonzero += usize::from(expect != 0.0);
        worst = worst.max((got - expect).abs());
    }
    if nonzero < NGU_INPUTS / 4 {
        return Err(format!("only {nonzero} inputs exercised the kernel"));
    }
    Ok(worst)
}

fn check_top_k(rng: &mut ChaCha8Rng) -> bool {
    (0..500).all(|_| {
        let dim = rng.random_range(2..8);
        let n = rng.random_range(0..60);
        let k = rng.random_range(1..12);
        let rows: Vec<Vec<Real>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let q: Vec<Real> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cos = |r: &[Real]| {
            let dot: Real = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            let nr = r.iter().map(|x| x * x).sum::<Real>().sqrt();
            let nq = q.iter().map(|x| x * x).sum::<Real>().sqrt();
            dot / (nr * nq)
        };
        let mut all: Vec<(usize, Real)> = rows.iter().enumerate().map(|(i, r)| (i, cos(r))).collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        let got = top_k(&q, rows.iter().map(Vec::as_slice), k);
        got.len() == all.len() && got.iter().zip(&all).all(|(g, o)| g.0 == o.0 && (g.1 - o.1).abs() < EXACT_TOL)
    })
}

fn check_vtrace(rng: &mut ChaCha8Rng) -> Real {
    let mut worst: Real = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(1..30);
        let logp: Vec<Real> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
        let rewards: Vec<Real> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let discounts: Vec<Real> = (0..n).map(|_| if rng.random_bool(0.1) { 0.0 } else { 0.95 }).collect();
        let values: Vec<Real> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bootstrap = rng.random_range(-1.0..1.0);
        let out = vtrace(&logp, &logp, &rewards, &discounts, &values, bootstrap, 1.0, 1.0).unwrap();
        let mut g = bootstrap;
        for s in (0..n).rev() {
            g = rewards[s] + discounts[s] * g;
            worst = worst.max((out.vs[s] - g).abs());
            let next = if s + 1 < n { out.vs[s + 1] } else { bootstrap };
            worst = worst.max((out.advantages[s] - (rewards[s] + discounts[s] * next - values[s])).abs());
        }
    }
    worst
}

fn check_recon(rng: &mut ChaCha8Rng) -> Real {
    let mut c = EncDecConfig::new(12, Vocab::standard().len());
    c.latent = 6;
    c.vision_hidden = 5;
    c.decoder_hidden = 5;
    c.decoder_token_embed = 4;
    let mut params = ParamSet::new();
    let vision = VisionDecoder::new(&mut params, &c, rng);
    let language = LanguageDecoder::new(&mut params, &c, rng);
    let params = Arc::new(params);
    let mut worst: Real = 0.0;
    for _ in 0..50 {
        let b = rng.random_range(1..5);
        let mut tape = Tape::with_params(params.clone());
        let e = tape.input(Tensor::new(b, c.latent, (0..b * c.latent).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap());

        let targets = Tensor::new(b, c.vision_dim, (0..b * c.vision_dim).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let (_, lv) = vision.loss(&mut tape, e, &targets).unwrap();
        let z = vision.logits(&mut tape, e).unwrap();
        let z = tape.value(z).data().to_vec();
        let bce: Real = z
            .iter()
            .zip(targets.data())
            .map(|(&z, &x)| {
                let d = 1.0 / (1.0 + (-z).exp());
                -(x * d.ln() + (1.0 - x) * (1.0 - d).ln())
            })
            .sum();
        worst = worst.max((tape.value(lv).item() - bce).abs() / bce.abs().max(1.0));

        let seqs: Vec<Vec<usize>> =
            (0..b).map(|_| (0..rng.random_range(1..=c.max_len)).map(|_| rng.random_range(1..c.vocab_size)).collect()).collect();
        let (logits, ll) = language.loss(&mut tape, e, &seqs).unwrap();
        let lg = tape.value(logits).clone();
        let mut ce = 0.0;
        for (row, (pos, s)) in (0..lg.rows()).map(|r| (r, (r / b, r % b))) {
            let Some(&t) = seqs[s].get(pos) else { continue };
            let x = lg.row(row);
            let m = x.iter().cloned().fold(Real::MIN, Real::max);
            let z: Real = x.iter().map(|v| (v - m).exp()).sum();
            for (i, v) in x.iter().enumerate() {
                let p = (v - m).exp() / z;
                ce -= if i == t { p.ln() } else { (1.0 - p).ln() };
            }
        }
        worst = worst.max((tape.value(ll).item() - ce).abs() / ce.abs().max(1.0));
    }
    worst
}

fn grad_config(arch: Arch) -> AgentConfig {
    let mut c = AgentConfig::new(arch, 16, Vocab::standard().len());
    c.hidden = 10;
    c.encdec.vision_hidden = 8;
    c.encdec.vision_embed = 6;
    c.encdec.latent = 8;
    c.encdec.token_embed = 6;
    c.encdec.attention_key = 4;
    c.encdec.attention_value = 4;
    c.encdec.language_embed = 6;
    c.encdec.decoder_hidden = 6;
    c.encdec.decoder_token_embed = 4;
    c.head_hidden = 6;
    c.read_heads = 2;
    c.top_k = 3;
    c.aggregation_key = 4;
    // Finite differences cannot see the read-out stop-gradient.
    c.recon_through_read = true;
    c
}

fn check_gradients() -> Result<Real, String> {
    let mut worst: Real = 0.0;
    for arch in Arch::ALL {
        let mut agent = Agent::new(grad_config(arch), 11).map_err(|e| e.to_string())?;
        let mut params = (*agent.params).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for id in params.ids().collect::<Vec<_>>() {
            params.get_mut(id).data_mut().iter_mut().for_each(|x| *x += rng.random_range(-0.05..0.05));
        }
        agent.set_params(params).map_err(|e| e.to_string())?;
        let world = Arc::new(World::generate(WorldConfig::default()).unwrap());
        let vocab = Arc::new(Vocab::standard());
        let mut spec = TaskSpec::new(&world, Regime::FastMapping, 2, 30).unwrap();
        spec.discovery_steps = 6;
        spec.instruction_steps = 6;
        let mut actors: Vec<Actor> = (0..2)
            .map(|i| {
                let (env, obs) = Env::new(world.clone(), vocab.clone(), spec.clone(), 40 + i).unwrap();
                Actor::new(Box::new(env), obs, agent.init_state(), 40 + i)
            })
            .collect();
        let r = collect_rollout(&agent, &mut actors, 12).map_err(|e| e.to_string())?;
        let w = LossWeights { entropy: 0.1, ..LossWeights::default() };
        let targets = compute_targets(&r.tape, &r.steps, &r.trajectories, &w).map_err(|e| e.to_string())?;
        let coords = sample_coords(&agent.params, 48, 13);
        let report = check_params(&agent.params, &coords, 1e-5, |tape| {
            let steps = replay(&agent, tape, &r.trajectories).map_err(|e| NumericsError::NonFinite(e.to_string()))?;
            let (loss, _) = total_loss(&agent, tape, &steps, &r.trajectories, &targets, &w)
                .map_err(|e| NumericsError::NonFinite(e.to_string()))?;
            Ok(loss)
        })
        .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn formula_suite() -> Line {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ngu = check_ngu(&mut rng);
    let topk = check_top_k(&mut rng);
    let vt = check_vtrace(&mut rng);
    let recon = check_recon(&mut rng);
    let grad = check_gradients();
    let took = start.elapsed();
    let detail = format!(
        "ngu max|err|={} top-k={} vtrace max|err|={vt:.1e} recon rel={recon:.1e} grad rel={} in {:.1}s",
        match &ngu {
            Ok(e) => format!("{e:.1e}"),
            Err(m) => m.clone(),
        },
        if topk { "exact" } else { "MISMATCH" },
        match &grad {
            Ok(e) => format!("{e:.1e}"),
            Err(m) => m.clone(),
        },
        took.as_secs_f64()
    );
    let ok = matches!(ngu, Ok(e) if e < NGU_TOL)
        && topk
        && vt < EXACT_TOL
        && recon < EXACT_TOL
        && matches!(grad, Ok(e) if e < GRAD_TOL)
        && took < FORMULA_BUDGET;
    verdict("1 formula exactness", ok, detail, false)
}

// ---- criterion 2 -------------------------------------------------------

fn solvability() -> Line {
    let start = Instant::now();
    let room = OracleTask::Room.config();
    let corridor = OracleTask::Corridor.config();
    let run = |c: &ExperimentConfig, random| run_oracle(c, SCRIPTED_EPISODES, 7, random).unwrap().accuracy;
    let (ro, rr, co, cr) = (run(&room, false), run(&room, true), run(&corridor, false), run(&corridor, true));
    let took = start.elapsed();
    let ok = ro >= ORACLE_MIN
        && co >= ORACLE_MIN
        && (rr - 1.0 / 3.0).abs() <= RANDOM_TOL
        && (cr - 0.5).abs() <= RANDOM_TOL
        && took < SCRIPTED_BUDGET;
    let detail = format!("room oracle={ro:.4} random={rr:.4}; corridor oracle={co:.4} random={cr:.4}; {:.1}s", took.as_secs_f64());
    verdict("2 task solvability", ok, detail, false)
}

// ---- criteria 6 (invariant) and 12 -------------------------------------

fn tiny(dir: &Path, name: &str, selective: bool) -> ExperimentConfig {
    let text = format!(
        "name = {name}\narch = dcem\nread_heads = 1\nselective_write = {selective}\nwrite_window = {SELECTIVE_WINDOW}\n\
         seeds = 9\nenv_steps = 2048\neval_every = 1024\nactors = 4\nunroll = 16\n\
         discovery_steps = 30\ninstruction_steps = 20\nout_dir = {}\n",
        dir.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

/// Episodes whose memory writes exceed `w` per language change.
fn write_violations(episodes_csv: &Path, w: usize) -> Result<(usize, usize), String> {
    let text = std::fs::read_to_string(episodes_csv).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name| header.iter().position(|h| *h == name).ok_or(format!("no {name} column"));
    let (wi, li) = (col("writes")?, col("language_changes")?);
    let (mut total, mut bad) = (0, 0);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let writes: usize = f[wi].parse().map_err(|_| "bad writes field")?;
        let changes: usize = f[li].parse().map_err(|_| "bad language_changes field")?;
        total += 1;
        bad += usize::from(writes > w * changes);
    }
    Ok((total, bad))
}

fn write_invariant(dir: &Path) -> Line {
    let config = tiny(dir, "selective", true);
    let summary = run_experiment(&config, 9).unwrap();
    let (total, bad) = write_violations(&summary.episodes, SELECTIVE_WINDOW).unwrap();
    let mut detail = format!("{bad} of {total} episodes exceed w*changes in a short selective run");
    let mut ok = bad == 0 && total > 0;
    if let Some(runs) = runs_dir() {
        for exp in ["m20-selective"] {
            for path in seed_dirs(&runs, exp) {
                match write_violations(&path.join("episodes.csv"), SELECTIVE_WINDOW) {
                    Ok((t, b)) => {
                        detail.push_str(&format!("; {exp}/{}: {b} of {t}", path.file_name().unwrap().to_string_lossy()));
                        ok &= b == 0;
                    }
                    Err(e) => {
                        detail.push_str(&format!("; {exp}: {e}"));
                        ok = false;
                    }
                }
            }
        }
    }
    verdict("6b writes <= w * language changes", ok, detail, false)
}

fn determinism(dir: &Path) -> Line {
    let a = run_experiment(&tiny(&dir.join("a"), "det", false), 9).unwrap();
    let b = run_experiment(&tiny(&dir.join("b"), "det", false), 9).unwrap();
    let (ma, mb) = (std::fs::read(&a.metrics).unwrap(), std::fs::read(&b.metrics).unwrap());
    let (ea, eb) = (std::fs::read(&a.episodes).unwrap(), std::fs::read(&b.episodes).unwrap());
    let ok = ma == mb && ea == eb && ma.len() > 100;
    verdict("12 determinism", ok, format!("metrics {} bytes, identical={}", ma.len(), ma == mb), false)
}

// ---- training criteria -------------------------------------------------

fn runs_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("FASTMAP_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../runs"));
    dir.is_dir().then_some(dir)
}

fn seed_dirs(runs: &Path, exp: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(runs.join(exp))
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("final.fmap").is_file())
        .collect();
    out.sort();
    out
}

/// Probe accuracy of every seed of one experiment.
struct Probes {
    runs: PathBuf,
    missing: Vec<String>,
}

impl Probes {
    fn seeds(&mut self, exp: &str, probe: Probe) -> Option<Vec<Real>> {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments").join(format!("{exp}.cfg"));
        let config = ExperimentConfig::parse(&std::fs::read_to_string(&path).ok()?).ok()?;
        let mut acc = Vec::new();
        for seed in &config.seeds {
            let ckpt = self.runs.join(exp).join(format!("seed-{seed}")).join("final.fmap");
            if !ckpt.is_file() {
                self.missing.push(format!("{exp}/seed-{seed}"));
                return None;
            }
            let ps = ProbeSpec { probe, episodes: PROBE_EPISODES, greedy: true, seed: 0 };
            acc.push(evaluate_probe(&ckpt, &ps).ok()?.accuracy);
        }
        Some(acc)
    }

    fn mean(&mut self, exp: &str, probe: Probe) -> Option<Real> {
        let a = self.seeds(exp, probe)?;
        Some(a.iter().sum::<Real>() / a.len() as Real)
    }
}

fn training_criterion(id: &'static str, f: impl FnOnce(&mut Probes) -> Option<(bool, String)>) -> Line {
    let Some(runs) = runs_dir() else {
        return skip(id, "no runs directory".into());
    };
    let mut p = Probes { runs, missing: Vec::new() };
    match f(&mut p) {
        Some((ok, detail)) => verdict(id, ok, detail, true),
        None if p.missing.is_empty() => verdict(id, false, "probe failed".into(), true),
        None => skip(id, format!("missing {}", p.missing.join(", "))),
    }
}

fn training_criteria() -> Vec<Line> {
    vec![
        training_criterion("3 flagship ordering", |p| {
            let dcem = p.seeds("flagship-dcem", Probe::Train)?;
            let lstm = p.mean("flagship-lstm", Probe::Train)?;
            let mean = dcem.iter().sum::<Real>() / dcem.len() as Real;
            let min = dcem.iter().cloned().fold(1.0, Real::min);
            Some((mean >= 0.90 && min >= 0.85 && lstm <= 0.45, format!("dcem mean={mean:.3} min={min:.3} lstm={lstm:.3}")))
        }),
        training_criterion("4 slow-learning sanity", |p| {
            let a = p.mean("slow-lstm", Probe::Train)?;
            Some((a >= 0.90, format!("lstm slow-learning={a:.3}")))
        }),
        training_criterion("5 reconstruction effect", |p| {
            let with = p.mean("flagship-dcem", Probe::Train)?;
            let without = p.mean("dcem-no-recon", Probe::Train)?;
            Some((with - without >= 0.25, format!("with={with:.3} without={without:.3}")))
        }),
        training_criterion("6a capacity and selective writing", |p| {
            let sel = p.mean("m20-selective", Probe::Train)?;
            let every = p.mean("m20-every", Probe::Train)?;
            Some((sel >= 0.85 && every <= 0.6, format!("selective={sel:.3} every-step={every:.3}")))
        }),
        training_criterion("7a object-count generalisation", |p| {
            let n3 = p.mean("flagship-dcem", Probe::ObjectCount(3))?;
            let n5 = p.mean("flagship-dcem", Probe::ObjectCount(5))?;
            let n8 = p.mean("flagship-dcem", Probe::ObjectCount(8))?;
            let mixed8 = p.mean("mixed-n", Probe::ObjectCount(8))?;
            let ok = n3 > n5 && n5 > n8 && n5 > 1.0 / 5.0 && n8 > 1.0 / 8.0 && mixed8 - n8 >= 0.1;
            Some((ok, format!("N3={n3:.3} N5={n5:.3} N8={n8:.3} mixed N8={mixed8:.3}")))
        }),
        training_criterion("7b novel objects", |p| {
            let train = p.mean("g20", Probe::Train)?;
            let novel = p.mean("g20", Probe::NovelObjects)?;
            let g3 = p.mean("g3", Probe::NovelObjects)?;
            let ok = (train - novel).abs() <= 0.1 && novel - g3 >= 0.2;
            Some((ok, format!("|G|=20 train={train:.3} novel={novel:.3}; |G|=3 novel={g3:.3}")))
        }),
        training_criterion("8 category extension", |p| {
            let meta = p.mean("category-meta", Probe::CategoryExtension)?;
            let plain = p.mean("flagship-dcem", Probe::CategoryExtension)?;
            let ok = meta - plain >= 0.15 && plain > 1.0 / 3.0;
            Some((ok, format!("meta-trained={meta:.3} default={plain:.3}")))
        }),
        training_criterion("9 top-k ablation", |p| {
            let k8 = p.mean("g20", Probe::NovelObjects)?;
            let k1 = p.mean("topk1", Probe::NovelObjects)?;
            Some((k8 - k1 >= 0.05, format!("k=8 novel={k8:.3} k=1 novel={k1:.3}")))
        }),
        training_criterion("10 novelty reward without shaping", |p| {
            let dual = p.mean("ngu-dual", Probe::Train)?;
            let none = p.mean("ngu-none", Probe::Train)?;
            let fused = p.mean("ngu-fused", Probe::Train)?;
            let ok = dual >= 0.75 && none <= 0.45 && fused < dual;
            Some((ok, format!("dual={dual:.3} none={none:.3} fused={fused:.3}")))
        }),
        training_criterion("11 fast/slow integration", |p| {
            let partial = p.mean("fastslow-partial", Probe::FastPut)?;
            let all = p.mean("fastslow-all", Probe::FastPut)?;
            let ok = partial >= 1.0 / 3.0 + 0.15 && all >= 0.85;
            Some((ok, format!("zero-shot fast-put={partial:.3} trained fast-put={all:.3}")))
        }),
    ]
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = vec![formula_suite(), solvability()];
    lines.extend(training_criteria());
    lines.push(write_invariant(&dir.path().join("inv")));
    lines.push(determinism(&dir.path().join("det")));

    let strict = std::env::var("FASTMAP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    let _ = writeln!(std::io::stdout().lock());
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        // Written to the handle directly so the lines show without --nocapture.
        let _ = writeln!(std::io::stdout().lock(), "{tag} {}: {}", l.id, l.detail);
        let counts = match l.status {
            Status::Pass => false,
            Status::Fail => !l.long || strict,
            Status::Skip => strict,
        };
        if counts {
            failed.push(l.id);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
