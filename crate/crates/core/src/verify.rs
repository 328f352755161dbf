//! Self-checks behind the `verify` command.
//!
//! Each check compares an implementation against an independent oracle
//! (finite differences, gradient descent, brute-force counting or search)
//! or against an exact invariant. A [`Fault`] deliberately breaks one
//! backward rule or the perturbation constructor so the suite can be seen
//! to fail.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{attend, represent, AttentionConfig, AttentionParams};
use crate::baselines::{baseline_represent, nn_classify, RepMode};
use crate::corpus::{ClassSplit, Corpus, EmbeddingTable, Example, UnigramModel, WordId};
use crate::episodes::{Episode, EpisodeShape, Phase};
use crate::grad::{check_op, gradcheck_many, op_cases, Cholesky, GradCheckOptions, OpKind, Tensor};
use crate::meta::evaluation_episode;
use crate::model::{Architecture, Dataset, ModelParams};
use crate::ridge::{argmax_rows, fit, normal_equation_residual, predict, ridge_objective};
use crate::seeds::{Purpose, Seeds};
use crate::signatures::{
    build_perturbation, conditional_distribution, entropy, episode_signatures, general_importance, apply_perturbation,
    ConditionalSource, EstimatorMode, PerturbationMap, SignatureError, SupportClassifierConfig, SupportCounts, EPSILON,
};
use crate::synth::{generate, SynthSpec};
use crate::Error;

/// Ways a perturbation can fail to be a frequency-preserving bijection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaFault {
    /// Two words share an image.
    NonBijective,
    /// A word is sent to a word with a different source-pool count.
    NonPreserving,
}

/// A deliberately injected bug.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The backward rule of this op returns twice the correct gradient.
    Backward(OpKind),
    /// The perturbation constructor returns a corrupted map.
    Sigma(SigmaFault),
}

impl FromStr for Fault {
    type Err = String;

    /// Parses `backward:<op>`, `sigma:non-bijective` or `sigma:non-preserving`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("backward", op)) => OpKind::from_name(op)
                .map(Fault::Backward)
                .ok_or_else(|| format!("unknown op {op:?}")),
            Some(("sigma", "non-bijective")) => Ok(Fault::Sigma(SigmaFault::NonBijective)),
            Some(("sigma", "non-preserving")) => Ok(Fault::Sigma(SigmaFault::NonPreserving)),
            _ => Err(format!(
                "expected backward:<op>, sigma:non-bijective or sigma:non-preserving, got {s:?}"
            )),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Backward(op) => write!(f, "backward:{op}"),
            Fault::Sigma(SigmaFault::NonBijective) => f.write_str("sigma:non-bijective"),
            Fault::Sigma(SigmaFault::NonPreserving) => f.write_str("sigma:non-preserving"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Shared inputs of all checks.
pub struct Context {
    pub seeds: Seeds,
    pub fault: Option<Fault>,
    /// Planted-keyword corpus with default generator settings.
    pub data: Dataset,
}

impl Context {
    pub fn new(seed: u64, fault: Option<Fault>) -> Result<Self, Error> {
        let synth = generate(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })?;
        Ok(Context {
            seeds: Seeds::new(seed),
            fault,
            data: Dataset::new(synth.corpus, synth.embeddings, synth.split)?,
        })
    }

    fn rng(&self, check: u64, counters: &[u64]) -> ChaCha8Rng {
        let mut key = vec![check];
        key.extend_from_slice(counters);
        self.seeds.rng(Purpose::Verify, &key)
    }

    fn backward_fault(&self) -> Option<OpKind> {
        match self.fault {
            Some(Fault::Backward(op)) => Some(op),
            _ => None,
        }
    }

    fn sigma_fault(&self) -> Option<SigmaFault> {
        match self.fault {
            Some(Fault::Sigma(f)) => Some(f),
            _ => None,
        }
    }
}

type Outcome = Result<String, String>;

pub struct Check {
    pub name: &'static str,
    run: fn(&Context) -> Outcome,
}

impl Check {
    pub fn run(&self, ctx: &Context) -> CheckResult {
        let start = Instant::now();
        let outcome = (self.run)(ctx);
        let seconds = start.elapsed().as_secs_f64();
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        CheckResult {
            name: self.name,
            passed,
            detail,
            seconds,
        }
    }
}

pub const CHECKS: [Check; 17] = [
    Check { name: "gradcheck.ops", run: gradcheck_ops },
    Check { name: "gradcheck.solve_spd", run: gradcheck_solve_spd },
    Check { name: "gradcheck.pipeline", run: gradcheck_pipeline },
    Check { name: "gradcheck.pipeline_mlp", run: gradcheck_pipeline_mlp },
    Check { name: "ridge.gd_oracle", run: ridge_gd_oracle },
    Check { name: "ridge.normal_equations", run: ridge_normal_equations },
    Check { name: "ridge.push_through", run: ridge_push_through },
    Check { name: "ridge.perturbation", run: ridge_perturbation },
    Check { name: "ridge.calibration", run: ridge_calibration },
    Check { name: "invariance.count_mle", run: invariance_count_mle },
    Check { name: "invariance.embedding_copermutation", run: invariance_copermutation },
    Check { name: "invariance.negative_controls", run: invariance_negative_controls },
    Check { name: "statistics.values", run: statistics_values },
    Check { name: "statistics.count_oracle", run: statistics_count_oracle },
    Check { name: "episodes.invariants", run: episode_invariants },
    Check { name: "episodes.determinism", run: episode_determinism },
    Check { name: "baselines.nn_oracle", run: nn_oracle },
];

pub fn find_check(name: &str) -> Option<&'static Check> {
    CHECKS.iter().find(|c| c.name == name)
}

/// Runs every check in order.
pub fn run_all(ctx: &Context) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|c| {
            let r = c.run(ctx);
            log::info!("{} {} ({:.2}s)", r.name, if r.passed { "ok" } else { "FAILED" }, r.seconds);
            r
        })
        .collect()
}

/// Plain-text table of results, one row per check.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<width$}  {}  {:>7.2}s  {}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        ));
    }
    out
}

fn uniform_tensor(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

// ---------------------------------------------------------------- gradients

fn gradcheck_ops(ctx: &Context) -> Outcome {
    let fault = ctx.backward_fault();
    let mut failed = Vec::new();
    let mut worst = 0f64;
    for case in op_cases() {
        let err = check_op(&case, 10, ctx.seeds.derive(Purpose::Verify, &[1]), fault).map_err(|e| format!("{}: {e}", case.label))?;
        if !(err < 1e-4) {
            failed.push(format!("{} ({err:.2e})", case.label));
        }
        worst = worst.max(err);
    }
    if failed.is_empty() {
        Ok(format!("{} ops x 10 points, max rel error {worst:.2e}", op_cases().len()))
    } else {
        Err(format!("backward rule mismatch: {}", failed.join(", ")))
    }
}

fn gradcheck_solve_spd(ctx: &Context) -> Outcome {
    let case = op_cases().into_iter().find(|c| c.kind == OpKind::SolveSpd).expect("solve_spd case");
    let err = check_op(&case, 10, ctx.seeds.derive(Purpose::Verify, &[2]), ctx.backward_fault()).map_err(|e| e.to_string())?;
    if err < 1e-5 {
        Ok(format!("10 points, max rel error {err:.2e}"))
    } else {
        Err(format!("solve_spd rel error {err:.2e} >= 1e-5"))
    }
}

/// Tiny corpus for the end-to-end gradient check: four classes of three
/// documents over twelve words.
fn toy_dataset(rng: &mut impl Rng) -> Result<Dataset, Error> {
    let mut examples = Vec::new();
    for label in 0..4 {
        for _ in 0..3 {
            let len = rng.gen_range(3..=6);
            let tokens = (0..len).map(|_| rng.gen_range(1..12)).collect();
            examples.push(Example { tokens, label });
        }
    }
    let corpus = Corpus::new(examples, (0..4).map(|c| format!("c{c}")).collect());
    let embeddings = EmbeddingTable::from_matrix(uniform_tensor(rng, 12, 6));
    let split = ClassSplit {
        train: vec![0, 1, 2, 3],
        val: Vec::new(),
        test: Vec::new(),
    };
    Dataset::new(corpus, embeddings, split)
}

fn pipeline(ctx: &Context, attention: AttentionConfig, stream: u64) -> Outcome {
    let run = || -> Result<(f64, usize, f64), Error> {
        let mut rng = ctx.rng(stream, &[]);
        let data = toy_dataset(&mut rng)?;
        let shape = EpisodeShape {
            ways: 2,
            shots: 1,
            queries: 2,
        };
        let episode = data.sample(Phase::Train, shape, &mut rng)?;
        let mut model = ModelParams::init(Architecture::main(attention, EstimatorMode::default()), &mut rng)?;
        model.scalars.log_lambda = rng.gen_range(-1.0..1.0);
        model.scalars.log_a = rng.gen_range(-1.0..1.0);
        model.scalars.b = rng.gen_range(-1.0..1.0);
        let prepared = model.prepare(&data, &episode)?;
        let start = Instant::now();
        let report = gradcheck_many(
            |tape, vars| Ok::<_, Error>(model.record(tape, vars, &prepared, &data.embeddings, None)?.loss),
            &model.tensors(),
            GradCheckOptions {
                fault: ctx.backward_fault(),
                ..GradCheckOptions::default()
            },
        )?;
        Ok((report.max_rel_error, report.coordinates, start.elapsed().as_secs_f64()))
    };
    let (err, coords, secs) = run().map_err(|e| e.to_string())?;
    let detail = format!("2-way 1-shot, {coords} coordinates, max rel error {err:.2e}, {secs:.2}s");
    if !(err < 1e-4) {
        Err(format!("loss gradient mismatch: {detail}"))
    } else if secs >= 10.0 {
        Err(format!("gradient check too slow: {detail}"))
    } else {
        Ok(detail)
    }
}

/// Hidden width of the toy models; small enough that every coordinate can
/// be perturbed.
const TOY_HIDDEN: usize = 16;

fn gradcheck_pipeline(ctx: &Context) -> Outcome {
    let config = AttentionConfig {
        hidden: TOY_HIDDEN,
        ..AttentionConfig::default()
    };
    pipeline(ctx, config, 3)
}

fn gradcheck_pipeline_mlp(ctx: &Context) -> Outcome {
    let config = AttentionConfig {
        use_bilstm: false,
        hidden: TOY_HIDDEN,
        ..AttentionConfig::default()
    };
    pipeline(ctx, config, 4)
}

// -------------------------------------------------------------------- ridge

struct RidgeInstance {
    phi: Tensor,
    y: Tensor,
    lambda: f64,
}

/// 50 random instances with `NK ≤ 25` support rows and `E ≤ 64` features.
fn ridge_instances(ctx: &Context) -> Vec<RidgeInstance> {
    (0..50)
        .map(|i| {
            let mut rng = ctx.rng(10, &[i]);
            let ways = rng.gen_range(2..=5);
            let shots = rng.gen_range(1..=25 / ways);
            let nk = ways * shots;
            let e = rng.gen_range(1..=64);
            let phi = uniform_tensor(&mut rng, nk, e);
            let mut y = Tensor::zeros(nk, ways);
            for r in 0..nk {
                y.set(r, r % ways, 1.0);
            }
            let lambda = rng.gen_range(-2.0f64..2.0).exp();
            RidgeInstance { phi, y, lambda }
        })
        .collect()
}

fn objective_gradient(inst: &RidgeInstance, w: &Tensor) -> Tensor {
    let resid = inst.phi.matmul(w).expect("shapes");
    let mut diff = resid;
    for (d, y) in diff.data_mut().iter_mut().zip(inst.y.data()) {
        *d -= y;
    }
    let mut g = inst.phi.transpose().matmul(&diff).expect("shapes");
    for (g, x) in g.data_mut().iter_mut().zip(w.data()) {
        *g = 2.0 * (*g + inst.lambda * x);
    }
    g
}

/// Largest eigenvalue of `ΦᵀΦ` by power iteration.
fn gram_spectral_radius(phi: &Tensor, rng: &mut impl Rng) -> f64 {
    let gram = phi.transpose().matmul(phi).expect("shapes");
    let mut v = uniform_tensor(rng, gram.rows(), 1);
    let mut estimate = 0.0;
    for _ in 0..500 {
        let next = gram.matmul(&v).expect("shapes");
        let norm = next.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = norm / v.frobenius_norm();
        v = next.scaled(1.0 / norm);
    }
    estimate
}

/// Minimizes the ridge objective with Nesterov-accelerated gradient
/// descent, step `1/L`, until the gradient norm drops below `1e-10`.
fn gradient_descent(inst: &RidgeInstance, rng: &mut impl Rng) -> (Tensor, usize) {
    // Overestimate L slightly; power iteration approaches from below.
    let l = 2.0 * (1.05 * gram_spectral_radius(&inst.phi, rng) + inst.lambda);
    let mu = 2.0 * inst.lambda;
    let momentum = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    let (e, n) = (inst.phi.cols(), inst.y.cols());
    let mut w = Tensor::zeros(e, n);
    let mut lookahead = w.clone();
    for iter in 0..200_000 {
        let g = objective_gradient(inst, &lookahead);
        if g.frobenius_norm() < 1e-10 {
            return (lookahead, iter);
        }
        let next: Vec<f64> = lookahead.data().iter().zip(g.data()).map(|(x, g)| x - g / l).collect();
        let next = Tensor::from_vec(e, n, next).expect("shape");
        let la: Vec<f64> = next
            .data()
            .iter()
            .zip(w.data())
            .map(|(x, prev)| x + momentum * (x - prev))
            .collect();
        lookahead = Tensor::from_vec(e, n, la).expect("shape");
        w = next;
    }
    (w, 200_000)
}

fn ridge_gd_oracle(ctx: &Context) -> Outcome {
    let mut worst = 0f64;
    let mut max_iters = 0;
    for (i, inst) in ridge_instances(ctx).iter().enumerate() {
        let closed = fit(&inst.phi, &inst.y, inst.lambda).map_err(|e| e.to_string())?;
        let mut rng = ctx.rng(11, &[i as u64]);
        let (gd, iters) = gradient_descent(inst, &mut rng);
        let a = ridge_objective(&inst.phi, &inst.y, &closed.w, inst.lambda).map_err(|e| e.to_string())?;
        let b = ridge_objective(&inst.phi, &inst.y, &gd, inst.lambda).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
        max_iters = max_iters.max(iters);
        if !((a - b).abs() <= 1e-6) {
            return Err(format!("instance {i}: closed-form loss {a} vs descent {b}"));
        }
    }
    Ok(format!("50 instances, max loss gap {worst:.2e}, descent used at most {max_iters} steps"))
}

fn ridge_normal_equations(ctx: &Context) -> Outcome {
    let mut worst = 0f64;
    for (i, inst) in ridge_instances(ctx).iter().enumerate() {
        let w = fit(&inst.phi, &inst.y, inst.lambda).map_err(|e| e.to_string())?.w;
        let (resid, scale) = normal_equation_residual(&inst.phi, &inst.y, &w, inst.lambda).map_err(|e| e.to_string())?;
        let rel = resid / scale.max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        if !(rel < 1e-8) {
            return Err(format!("instance {i}: relative residual {rel:.2e}"));
        }
    }
    Ok(format!("50 instances, max relative residual {worst:.2e}"))
}

/// Compares the dual solution with the primal `(ΦᵀΦ + λI)⁻¹ ΦᵀY`.
fn ridge_push_through(ctx: &Context) -> Outcome {
    let mut worst = 0f64;
    for (i, inst) in ridge_instances(ctx).iter().enumerate() {
        let dual = fit(&inst.phi, &inst.y, inst.lambda).map_err(|e| e.to_string())?.w;
        let pt = inst.phi.transpose();
        let mut system = pt.matmul(&inst.phi).map_err(|e| e.to_string())?;
        for d in 0..system.rows() {
            system.set(d, d, system.get(d, d) + inst.lambda);
        }
        let rhs = pt.matmul(&inst.y).map_err(|e| e.to_string())?;
        let primal = Cholesky::factor(&system)
            .and_then(|c| c.solve(&rhs))
            .map_err(|e| e.to_string())?;
        let diff = dual.max_abs_diff(&primal);
        worst = worst.max(diff);
        if !(diff < 1e-9) {
            return Err(format!("instance {i}: primal and dual solutions differ by {diff:.2e}"));
        }
    }
    Ok(format!("50 instances, max entry difference {worst:.2e}"))
}

fn ridge_perturbation(ctx: &Context) -> Outcome {
    for (i, inst) in ridge_instances(ctx).iter().enumerate() {
        let w = fit(&inst.phi, &inst.y, inst.lambda).map_err(|e| e.to_string())?.w;
        let best = ridge_objective(&inst.phi, &inst.y, &w, inst.lambda).map_err(|e| e.to_string())?;
        let mut rng = ctx.rng(12, &[i as u64]);
        for j in 0..100 {
            let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
            let delta = uniform_tensor(&mut rng, w.rows(), w.cols()).scaled(scale);
            let moved: Vec<f64> = w.data().iter().zip(delta.data()).map(|(a, b)| a + b).collect();
            let moved = Tensor::from_vec(w.rows(), w.cols(), moved).expect("shape");
            let value = ridge_objective(&inst.phi, &inst.y, &moved, inst.lambda).map_err(|e| e.to_string())?;
            if value < best - 1e-12 * best.max(1.0) {
                return Err(format!("instance {i} perturbation {j}: {value} below closed-form {best}"));
            }
        }
    }
    Ok("50 instances x 100 perturbations, none lower".into())
}

fn ridge_calibration(ctx: &Context) -> Outcome {
    for i in 0..10u64 {
        let mut rng = ctx.rng(13, &[i]);
        let inst = &ridge_instances(ctx)[i as usize];
        let sol = fit(&inst.phi, &inst.y, inst.lambda).map_err(|e| e.to_string())?;
        let phi_q = uniform_tensor(&mut rng, 25, inst.phi.cols());
        let reference = argmax_rows(&predict(&phi_q, &sol, 1.0, 0.0).map_err(|e| e.to_string())?);
        for j in 0..20 {
            let a = rng.gen_range(-3.0f64..3.0).exp();
            let b = rng.gen_range(-5.0..5.0);
            let logits = predict(&phi_q, &sol, a, b).map_err(|e| e.to_string())?;
            if argmax_rows(&logits) != reference {
                return Err(format!("instance {i}: (a, b) = ({a}, {b}) changed a prediction (pair {j})"));
            }
        }
    }
    Ok("10 instances x 20 (a, b) pairs, predictions unchanged".into())
}

// ---------------------------------------------------------------- invariance

/// Corrupts a valid perturbation. Words are chosen from the episode so
/// that the corruption is visible in its signatures.
pub fn corrupt_perturbation(
    sigma: &PerturbationMap,
    pool: &UnigramModel,
    episode: &Episode,
    fault: SigmaFault,
) -> PerturbationMap {
    let mut forward = sigma.mapping().to_vec();
    let tokens = || episode.support.iter().chain(&episode.query).flat_map(|e| e.tokens.iter().copied());
    // The most frequent episode word and the word whose pool count is
    // furthest from it.
    let u = tokens().max_by_key(|&w| (pool.count(w), std::cmp::Reverse(w))).expect("non-empty episode");
    let v = (0..forward.len())
        .filter(|&w| w != u)
        .max_by_key(|&w| (pool.count(w).abs_diff(pool.count(u)), std::cmp::Reverse(w)))
        .expect("vocabulary of at least two words");
    match fault {
        SigmaFault::NonBijective => forward[u] = forward[v],
        SigmaFault::NonPreserving => forward.swap(u, v),
    }
    PerturbationMap::from_mapping(forward)
}

/// Attention weights of every support and query example.
fn episode_alphas(
    episode: &Episode,
    pool: &UnigramModel,
    embeddings: &EmbeddingTable,
    mode: EstimatorMode,
    params: &AttentionParams,
) -> Result<Vec<Vec<f64>>, Error> {
    let sigs = episode_signatures(episode, pool, embeddings, mode, &SupportClassifierConfig::default())?;
    sigs.support
        .iter()
        .chain(&sigs.query)
        .map(|s| Ok(attend(s, params)?.alpha))
        .collect()
}

fn max_alpha_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Random training episode of random shape with its pool unigram model,
/// freshly initialized attention, and a perturbation built from the pool.
struct InvarianceCase {
    episode: Episode,
    pool: UnigramModel,
    params: AttentionParams,
    sigma: PerturbationMap,
}

fn invariance_case(ctx: &Context, check: u64, i: u64) -> Result<InvarianceCase, Error> {
    let mut rng = ctx.rng(check, &[i]);
    let shape = EpisodeShape {
        ways: rng.gen_range(2..=5),
        shots: rng.gen_range(1..=5),
        queries: rng.gen_range(1..=5),
    };
    let episode = ctx.data.sample(Phase::Train, shape, &mut rng)?;
    let pool = ctx.data.pool_unigram(&episode);
    let params = AttentionParams::init(AttentionConfig::default(), &mut rng)?;
    let mut sigma = build_perturbation(&pool, &mut rng);
    if let Some(f) = ctx.sigma_fault() {
        sigma = corrupt_perturbation(&sigma, &pool, &episode, f);
    }
    Ok(InvarianceCase {
        episode,
        pool,
        params,
        sigma,
    })
}

fn invariance(ctx: &Context, check: u64, copermute: bool) -> Outcome {
    let mode = if copermute {
        EstimatorMode::EmbeddingLinear
    } else {
        EstimatorMode::CountMle
    };
    let mut worst = 0f64;
    for i in 0..100 {
        let case = invariance_case(ctx, check, i).map_err(|e| e.to_string())?;
        case.sigma
            .validate(&case.pool)
            .map_err(|e| format!("pair {i}: perturbation rejected: {e}"))?;
        let perturbed = apply_perturbation(&case.episode, &case.sigma);
        let emb = &ctx.data.embeddings;
        let moved;
        let perturbed_emb = if copermute {
            moved = emb.permuted(case.sigma.mapping());
            &moved
        } else {
            emb
        };
        let before = episode_alphas(&case.episode, &case.pool, emb, mode, &case.params).map_err(|e| e.to_string())?;
        let after = episode_alphas(&perturbed, &case.pool, perturbed_emb, mode, &case.params).map_err(|e| e.to_string())?;
        let gap = max_alpha_gap(&before, &after);
        worst = worst.max(gap);
        if !(gap <= 1e-6) {
            return Err(format!("pair {i}: attention changed by {gap:.2e}"));
        }
        if copermute {
            let examples = case.episode.support.iter().chain(&case.episode.query);
            let moved_examples = perturbed.support.iter().chain(&perturbed.query);
            for ((x, y), alpha) in examples.zip(moved_examples).zip(&before) {
                let scores = crate::attention::AttentionScores { alpha: alpha.clone() };
                let a = represent(&x.tokens, &scores, emb).map_err(|e| e.to_string())?;
                let b = represent(&y.tokens, &scores, perturbed_emb).map_err(|e| e.to_string())?;
                if a != b {
                    return Err(format!("pair {i}: representation changed under co-permutation"));
                }
            }
        }
    }
    Ok(format!("100 (episode, perturbation) pairs, max attention difference {worst:.2e}"))
}

fn invariance_count_mle(ctx: &Context) -> Outcome {
    invariance(ctx, 20, false)
}

fn invariance_copermutation(ctx: &Context) -> Outcome {
    invariance(ctx, 21, true)
}

/// Corrupted perturbations must be rejected by validation, and the
/// frequency-changing one must visibly change attention.
fn invariance_negative_controls(ctx: &Context) -> Outcome {
    let mut changed = 0;
    let trials = 20;
    for i in 0..trials {
        let mut rng = ctx.rng(22, &[i]);
        let shape = EpisodeShape {
            ways: 5,
            shots: 1,
            queries: 5,
        };
        let episode = ctx.data.sample(Phase::Train, shape, &mut rng).map_err(|e| e.to_string())?;
        let pool = ctx.data.pool_unigram(&episode);
        let params = AttentionParams::init(AttentionConfig::default(), &mut rng).map_err(|e| e.to_string())?;
        let sigma = build_perturbation(&pool, &mut rng);

        let bad = corrupt_perturbation(&sigma, &pool, &episode, SigmaFault::NonBijective);
        if !matches!(bad.validate(&pool), Err(SignatureError::NotBijective(_))) {
            return Err(format!("episode {i}: non-bijective map passed validation"));
        }
        let bad = corrupt_perturbation(&sigma, &pool, &episode, SigmaFault::NonPreserving);
        if !matches!(bad.validate(&pool), Err(SignatureError::NotFrequencyPreserving { .. })) {
            return Err(format!("episode {i}: frequency-changing map passed validation"));
        }
        let mode = EstimatorMode::CountMle;
        let emb = &ctx.data.embeddings;
        let before = episode_alphas(&episode, &pool, emb, mode, &params).map_err(|e| e.to_string())?;
        let after = episode_alphas(&apply_perturbation(&episode, &bad), &pool, emb, mode, &params).map_err(|e| e.to_string())?;
        if max_alpha_gap(&before, &after) > 1e-6 {
            changed += 1;
        }
    }
    if changed == trials {
        Ok(format!("{trials} episodes: corrupted maps rejected, attention changed in all"))
    } else {
        Err(format!("frequency-changing map left attention unchanged in {} of {trials} episodes", trials - changed))
    }
}

// --------------------------------------------------------------- statistics

fn statistics_values(_: &Context) -> Outcome {
    // One occurrence in a thousand tokens: P = 1e-3 = ε.
    let mut counts = vec![0u64; 3];
    counts[1] = 1;
    counts[2] = 999;
    let unigram = UnigramModel::from_counts(counts);
    let s = general_importance(&[1], &unigram)[0];
    if s != 0.5 || unigram.prob(1) != EPSILON {
        return Err(format!("s at P = 1e-3 is {s:e}, expected exactly 0.5"));
    }

    let expected = 1.0 / 5f64.ln();
    let t_direct = 1.0 / entropy(&[0.2; 5]);
    // A word seen once in each of five classes.
    let support: Vec<Example> = (0..5).map(|label| Example { tokens: vec![7], label }).collect();
    let labels: Vec<usize> = (0..5).collect();
    let counts = SupportCounts::new(&support, &labels, 5);
    let t_counts = crate::signatures::class_specific_importance(&[7], &ConditionalSource::Counts(&counts))[0];
    for (name, t) in [("entropy", t_direct), ("count estimator", t_counts)] {
        if (t - expected).abs() > 1e-12 {
            return Err(format!("t of uniform 5-way ({name}) is {t}, expected {expected}"));
        }
    }
    Ok(format!("s = {s}, t = {t_counts:.15}"))
}

/// `P(y | w)` by scanning the support directly; uniform when unseen.
fn brute_force_conditional(word: WordId, support: &[Example], labels: &[usize], ways: usize) -> Vec<f64> {
    let mut counts = vec![0u64; ways];
    for (ex, &l) in support.iter().zip(labels) {
        counts[l] += ex.tokens.iter().filter(|&&w| w == word).count() as u64;
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![1.0 / ways as f64; ways];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

fn statistics_count_oracle(ctx: &Context) -> Outcome {
    let shape = EpisodeShape {
        ways: 5,
        shots: 5,
        queries: 5,
    };
    let vocab = ctx.data.embeddings.vocab_size();
    let mut words_checked = 0usize;
    for i in 0..1000u64 {
        let mut rng = ctx.rng(30, &[i]);
        let phase = [Phase::Train, Phase::Val, Phase::Test][(i % 3) as usize];
        let episode = ctx.data.sample(phase, shape, &mut rng).map_err(|e| e.to_string())?;
        let labels = episode.support_labels();
        let counts = SupportCounts::new(&episode.support, &labels, 5);
        let source = ConditionalSource::Counts(&counts);
        let mut words: Vec<WordId> = episode
            .support
            .iter()
            .chain(&episode.query)
            .flat_map(|e| e.tokens.iter().copied())
            .collect();
        words.extend((0..5).map(|_| rng.gen_range(0..vocab)));
        words.sort_unstable();
        words.dedup();
        for w in words {
            let got = conditional_distribution(w, &source);
            let want = brute_force_conditional(w, &episode.support, &labels, 5);
            if got != want {
                return Err(format!("support {i}, word {w}: {got:?} != {want:?}"));
            }
            words_checked += 1;
        }
    }
    Ok(format!("1000 supports, {words_checked} words, all exact"))
}

// ----------------------------------------------------------------- episodes

fn random_shape(rng: &mut impl Rng) -> EpisodeShape {
    EpisodeShape {
        ways: rng.gen_range(2..=5),
        shots: rng.gen_range(1..=5),
        queries: rng.gen_range(1..=5),
    }
}

fn sample_many(ctx: &Context, n: u64) -> Result<Vec<Episode>, Error> {
    (0..n)
        .map(|i| {
            let mut rng = ctx.rng(40, &[i]);
            let phase = [Phase::Train, Phase::Val, Phase::Test][(i % 3) as usize];
            let shape = random_shape(&mut rng);
            Ok(ctx.data.sample(phase, shape, &mut rng)?)
        })
        .collect()
}

/// Every structural property an episode must have; returns the first
/// violation.
pub fn episode_violation(episode: &Episode, corpus: &Corpus, split: &ClassSplit, shape: EpisodeShape) -> Option<String> {
    let phase_classes = episode.phase.classes(split);
    let mut classes = episode.classes.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != shape.ways || episode.classes.len() != shape.ways {
        return Some("classes are not N distinct classes".into());
    }
    if !episode.classes.iter().all(|c| phase_classes.contains(c)) {
        return Some("class outside the phase's split".into());
    }
    for (ids, examples, per_class, role) in [
        (&episode.support_ids, &episode.support, shape.shots, "support"),
        (&episode.query_ids, &episode.query, shape.queries, "query"),
    ] {
        if ids.len() != examples.len() {
            return Some(format!("{role} ids and examples differ in length"));
        }
        for (&id, ex) in ids.iter().zip(examples) {
            if corpus.example(id) != ex {
                return Some(format!("{role} example differs from corpus entry {id}"));
            }
        }
        for &c in &episode.classes {
            if examples.iter().filter(|e| e.label == c).count() != per_class {
                return Some(format!("{role} has the wrong count for class {c}"));
            }
        }
        if examples.iter().any(|e| !episode.classes.contains(&e.label)) {
            return Some(format!("{role} holds a class outside the episode"));
        }
    }
    let mut all: Vec<usize> = episode.support_ids.iter().chain(&episode.query_ids).copied().collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Some("support and query overlap".into());
    }
    let mut pool = episode.source_classes.clone();
    pool.sort_unstable();
    let mut expected: Vec<usize> = match episode.phase {
        Phase::Train => split.train.iter().copied().filter(|c| !episode.classes.contains(c)).collect(),
        Phase::Val | Phase::Test => split.train.clone(),
    };
    expected.sort_unstable();
    if pool != expected {
        return Some("source pool classes are wrong for the phase".into());
    }
    if episode
        .source_pool(corpus)
        .any(|e| episode.classes.contains(&e.label))
    {
        return Some("source pool contains an episode class".into());
    }
    None
}

fn episode_invariants(ctx: &Context) -> Outcome {
    let mut violations = Vec::new();
    let n = 10_000;
    for i in 0..n {
        let mut rng = ctx.rng(40, &[i]);
        let phase = [Phase::Train, Phase::Val, Phase::Test][(i % 3) as usize];
        let shape = random_shape(&mut rng);
        let episode = ctx.data.sample(phase, shape, &mut rng).map_err(|e| e.to_string())?;
        if let Some(v) = episode_violation(&episode, &ctx.data.corpus, &ctx.data.split, shape) {
            violations.push(format!("episode {i}: {v}"));
        }
    }
    match violations.first() {
        None => Ok(format!("{n} episodes, 0 violations")),
        Some(first) => Err(format!("{} violations, first: {first}", violations.len())),
    }
}

fn episode_bytes(episodes: &[Episode]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in episodes {
        out.extend(format!("{:?} {:?} {:?} {:?}\n", e.classes, e.support_ids, e.query_ids, e.source_classes).bytes());
    }
    out
}

fn episode_determinism(ctx: &Context) -> Outcome {
    let first = sample_many(ctx, 10_000).map_err(|e| e.to_string())?;
    let second = sample_many(ctx, 10_000).map_err(|e| e.to_string())?;
    if first != second || episode_bytes(&first) != episode_bytes(&second) {
        return Err("same-seed reruns sampled different episodes".into());
    }
    let shape = EpisodeShape {
        ways: 5,
        shots: 1,
        queries: 5,
    };
    for index in 0..100 {
        let a = evaluation_episode(&ctx.data, Phase::Test, shape, ctx.seeds.master(), index).map_err(|e| e.to_string())?;
        let b = evaluation_episode(&ctx.data, Phase::Test, shape, ctx.seeds.master(), index).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("evaluation episode {index} differs between reruns"));
        }
    }
    Ok("10000 episodes and 100 evaluation episodes byte-identical across reruns".into())
}

// ---------------------------------------------------------------- baselines

/// Lowest-index support vector at minimum squared Euclidean distance.
fn brute_force_nn(support: &[Vec<f64>], labels: &[usize], query: &[f64]) -> usize {
    let dists: Vec<f64> = support
        .iter()
        .map(|s| s.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    labels[dists.iter().position(|&d| d == min).expect("non-empty support")]
}

fn nn_oracle(ctx: &Context) -> Outcome {
    let shape = EpisodeShape {
        ways: 5,
        shots: 5,
        queries: 5,
    };
    let mut queries = 0usize;
    for i in 0..1000u64 {
        let mut rng = ctx.rng(50, &[i]);
        let episode = ctx.data.sample(Phase::Test, shape, &mut rng).map_err(|e| e.to_string())?;
        let labels = episode.support_labels();
        let (support, query): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if i % 2 == 0 {
            let mode = if i % 4 == 0 { RepMode::Avg } else { RepMode::Idf };
            let rep = |e: &Example| baseline_represent(&e.tokens, mode, &ctx.data.embeddings, ctx.data.idf());
            (episode.support.iter().map(rep).collect(), episode.query.iter().map(rep).collect())
        } else {
            // Small integer vectors make exact ties common.
            let mut vec = || (0..3).map(|_| rng.gen_range(-2..=2) as f64).collect::<Vec<f64>>();
            let support = (0..labels.len()).map(|_| vec()).collect();
            let query = (0..episode.query.len()).map(|_| vec()).collect();
            (support, query)
        };
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        let labels: Vec<usize> = order.iter().map(|&j| labels[j]).collect();
        let support: Vec<Vec<f64>> = order.iter().map(|&j| support[j].clone()).collect();
        for q in &query {
            let got = nn_classify(&support, &labels, q);
            let want = brute_force_nn(&support, &labels, q);
            if got != want {
                return Err(format!("episode {i}: nearest neighbour {got} != brute force {want}"));
            }
            queries += 1;
        }
    }
    Ok(format!("1000 episodes, {queries} queries, all agree"))
}
