//! Benchmark harness: evaluates the search-guided agent, the bare agent,
//! and the distilled program over held-out users, with per-phase query
//! accounting, latency, intersection-restricted metrics, and the
//! trace-budget sweep.

use serde::{Deserialize, Serialize};

use crate::agent::AgentNet;
use crate::classifier::{BlackBox, Phase, PHASES};
use crate::config::Domain;
use crate::dsl::Intervention;
use crate::error::Result;
use crate::inference::generate_intervention;
use crate::program::{
    build_automaton, run_program, sample_traces, sequence_similarity, train_program,
    ExplainableProgram,
};
use crate::schema::UserState;
use crate::tree::TreeConfig;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub infer_sims: usize,
    pub alpha: usize,
    pub lambda: f64,
    pub c_puct: f64,
    pub beta: f64,
}

impl BenchConfig {
    pub fn from_defaults(d: &crate::config::Defaults) -> Self {
        Self {
            infer_sims: d.infer_sims,
            alpha: d.alpha,
            lambda: d.lambda,
            c_puct: d.c_puct,
            beta: d.beta,
        }
    }
}

/// Per-user evaluation record of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserResult {
    pub success: bool,
    pub length: usize,
    pub cost: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub name: String,
    pub users: usize,
    /// Fraction of users with a successful intervention.
    pub accuracy: f64,
    /// Mean non-STOP length over successful interventions.
    pub mean_length: Option<f64>,
    /// Mean consequence-aware cost over successful interventions.
    pub mean_cost: Option<f64>,
    pub mean_time_ms: f64,
    pub max_time_ms: f64,
    /// Black-box queries this model issued during its runs, per phase.
    pub queries: [u64; 4],
    pub per_user: Vec<UserResult>,
}

impl ModelMetrics {
    fn from_results(name: &str, results: Vec<UserResult>, queries: [u64; 4]) -> Self {
        let users = results.len();
        let succ: Vec<&UserResult> = results.iter().filter(|r| r.success).collect();
        let accuracy = succ.len() as f64 / users.max(1) as f64;
        let mean_length = (!succ.is_empty())
            .then(|| succ.iter().map(|r| r.length as f64).sum::<f64>() / succ.len() as f64);
        let mean_cost = (!succ.is_empty())
            .then(|| succ.iter().map(|r| r.cost).sum::<f64>() / succ.len() as f64);
        let mean_time_ms = results.iter().map(|r| r.time_ms).sum::<f64>() / users.max(1) as f64;
        let max_time_ms = results.iter().map(|r| r.time_ms).fold(0.0, f64::max);
        Self {
            name: name.into(),
            users,
            accuracy,
            mean_length,
            mean_cost,
            mean_time_ms,
            max_time_ms,
            queries,
            per_user: results,
        }
    }
}

/// Metrics restricted to users where every compared model succeeded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionMetrics {
    pub users: usize,
    pub per_model: Vec<IntersectionRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntersectionRow {
    pub name: String,
    pub mean_length: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub traces_m: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub dataset: String,
    pub models: Vec<ModelMetrics>,
    pub intersection: Option<IntersectionMetrics>,
    /// Mean similarity between program and search interventions on users
    /// where both succeeded.
    pub program_similarity: Option<f64>,
    pub sweep: Vec<SweepPoint>,
    /// Counter totals per phase at the end of the run.
    pub query_totals: [u64; 4],
    /// Per-user search queries at inference, averaged.
    pub mcts_queries_per_user: f64,
}

fn worker_count() -> usize {
    std::env::var("RECOURSE_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(1)
}

/// Runs `f` over `0..n`, fanning out when RECOURSE_WORKERS asks for it.
/// Results keep their index order either way.
fn for_users<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let workers = worker_count();
    if workers <= 1 {
        (0..n).map(f).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool");
        pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// Evaluates all three models over the held-out users. Search and
/// agent-only queries land in the inference phase; the program runs under
/// distill-predict (where it must spend nothing) and its outcomes are
/// scored out of band.
pub fn run_bench(
    domain: &Domain,
    bb: &BlackBox,
    agent: &AgentNet,
    program: Option<&ExplainableProgram>,
    users: &[UserState],
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    let mut models = Vec::new();
    let mut program_interventions: Vec<Option<Intervention>> = Vec::new();
    let mut mcts_interventions: Vec<Option<Intervention>> = Vec::new();

    // Agent + search.
    bb.set_phase(Phase::Inference);
    let before = bb.counter().snapshot();
    let results = for_users(users.len(), |i| {
        let out = generate_intervention(
            domain,
            bb,
            agent,
            &users[i],
            cfg.infer_sims,
            cfg.alpha,
            cfg.lambda,
            cfg.c_puct,
            cfg.beta,
        )?;
        Ok((
            UserResult {
                success: out.success,
                length: out.actions.effective_len(&domain.library),
                cost: out.total_cost,
                time_ms: out.time_ms,
            },
            out.success.then_some(out.actions),
        ))
    })?;
    let mcts_queries = delta(before, bb.counter().snapshot());
    let mut rows = Vec::with_capacity(users.len());
    for (r, iv) in results {
        rows.push(r);
        mcts_interventions.push(iv);
    }
    let mcts_queries_per_user =
        mcts_queries.iter().sum::<u64>() as f64 / users.len().max(1) as f64;
    models.push(ModelMetrics::from_results("agent+mcts", rows, mcts_queries));

    // Agent only.
    let before = bb.counter().snapshot();
    let results = for_users(users.len(), |i| {
        let out = generate_intervention(
            domain, bb, agent, &users[i], 0, cfg.alpha, cfg.lambda, cfg.c_puct, cfg.beta,
        )?;
        Ok(UserResult {
            success: out.success,
            length: out.actions.effective_len(&domain.library),
            cost: out.total_cost,
            time_ms: out.time_ms,
        })
    })?;
    models.push(ModelMetrics::from_results(
        "agent-only",
        results,
        delta(before, bb.counter().snapshot()),
    ));

    // Distilled program, if present.
    let mut program_similarity = None;
    if let Some(program) = program {
        bb.set_phase(Phase::DistillPredict);
        let before = bb.counter().snapshot();
        let results = for_users(users.len(), |i| {
            let run = run_program(domain, program, &users[i]);
            let flipped = run.success && bb.score_uncounted(&run.final_state);
            let total =
                if flipped { costs_of(domain, &users[i], &run.intervention)? } else { 0.0 };
            Ok((
                UserResult {
                    success: flipped,
                    length: run.intervention.effective_len(&domain.library),
                    cost: total,
                    time_ms: run.time_ms,
                },
                flipped.then_some(run.intervention),
            ))
        })?;
        let queries = delta(before, bb.counter().snapshot());
        let mut rows = Vec::with_capacity(users.len());
        for (r, iv) in results {
            rows.push(r);
            program_interventions.push(iv);
        }
        models.push(ModelMetrics::from_results("program", rows, queries));
        let mut sims = Vec::new();
        for (p, m) in program_interventions.iter().zip(&mcts_interventions) {
            if let (Some(p), Some(m)) = (p, m) {
                sims.push(sequence_similarity(&p.actions, &m.actions));
            }
        }
        if !sims.is_empty() {
            program_similarity = Some(sims.iter().sum::<f64>() / sims.len() as f64);
        }
    }

    let intersection = intersection_metrics(&models);
    Ok(BenchReport {
        dataset: domain.name.clone(),
        models,
        intersection,
        program_similarity,
        sweep: Vec::new(),
        query_totals: bb.counter().snapshot(),
        mcts_queries_per_user,
    })
}

fn costs_of(domain: &Domain, root: &UserState, iv: &Intervention) -> Result<f64> {
    crate::causal::intervention_cost(
        &domain.schema,
        &domain.library,
        &domain.graph,
        &domain.cost,
        root,
        iv,
    )
}

fn delta(before: [u64; 4], after: [u64; 4]) -> [u64; 4] {
    std::array::from_fn(|i| after[i] - before[i])
}

fn intersection_metrics(models: &[ModelMetrics]) -> Option<IntersectionMetrics> {
    if models.len() < 2 {
        return None;
    }
    let n = models[0].per_user.len();
    let common: Vec<usize> = (0..n)
        .filter(|&i| models.iter().all(|m| m.per_user[i].success))
        .collect();
    if common.is_empty() {
        return None;
    }
    let per_model = models
        .iter()
        .map(|m| IntersectionRow {
            name: m.name.clone(),
            mean_length: common.iter().map(|&i| m.per_user[i].length as f64).sum::<f64>()
                / common.len() as f64,
            mean_cost: common.iter().map(|&i| m.per_user[i].cost).sum::<f64>()
                / common.len() as f64,
        })
        .collect();
    Some(IntersectionMetrics { users: common.len(), per_model })
}

/// Distills programs at increasing trace budgets over several seeds and
/// scores each on the held-out users.
#[allow(clippy::too_many_arguments)]
pub fn budget_sweep(
    domain: &Domain,
    bb: &BlackBox,
    agent: &AgentNet,
    pool: &[UserState],
    test_users: &[UserState],
    budgets: &[usize],
    seeds: &[u64],
    cfg: &BenchConfig,
) -> Result<Vec<SweepPoint>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut points = Vec::new();
    for &seed in seeds {
        let mut shuffled = pool.to_vec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        for &m in budgets {
            let traces =
                sample_traces(domain, bb, agent, &shuffled, m, cfg.infer_sims, cfg.alpha, 8)?;
            let raw = build_automaton(domain, &traces)?;
            let tree_cfg =
                TreeConfig { max_depth: domain.defaults.tree_max_depth, min_leaf: 1 };
            let program = train_program(domain, &raw, &tree_cfg, cfg.alpha);
            bb.set_phase(Phase::DistillPredict);
            let hits = test_users
                .iter()
                .filter(|u| {
                    let run = run_program(domain, &program, u);
                    run.success && bb.score_uncounted(&run.final_state)
                })
                .count();
            points.push(SweepPoint {
                traces_m: m,
                seed,
                accuracy: hits as f64 / test_users.len().max(1) as f64,
            });
        }
    }
    Ok(points)
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table for terminals; one row per model plus the
    /// intersection block and query accounting.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset: {}\n", self.dataset));
        out.push_str(&format!(
            "{:<12} {:>6} {:>9} {:>9} {:>9} {:>11} {:>11}\n",
            "model", "users", "accuracy", "mean_len", "mean_cost", "mean_ms", "max_ms"
        ));
        for m in &self.models {
            out.push_str(&format!(
                "{:<12} {:>6} {:>9.3} {:>9} {:>9} {:>11.2} {:>11.2}\n",
                m.name,
                m.users,
                m.accuracy,
                m.mean_length.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                m.mean_cost.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                m.mean_time_ms,
                m.max_time_ms,
            ));
        }
        if let Some(sim) = self.program_similarity {
            out.push_str(&format!("program/search sequence similarity: {sim:.3}\n"));
        }
        if let Some(ix) = &self.intersection {
            out.push_str(&format!("intersection ({} users where all succeed):\n", ix.users));
            for row in &ix.per_model {
                out.push_str(&format!(
                    "  {:<12} mean_len {:>6.2}  mean_cost {:>7.2}\n",
                    row.name, row.mean_length, row.mean_cost
                ));
            }
        }
        out.push_str("queries by phase:\n");
        for (i, phase) in PHASES.iter().enumerate() {
            out.push_str(&format!("  {:<16} {}\n", phase.name(), self.query_totals[i]));
        }
        out.push_str(&format!(
            "search queries per user at inference: {:.1}\n",
            self.mcts_queries_per_user
        ));
        if !self.sweep.is_empty() {
            out.push_str("trace-budget sweep:\n");
            for p in &self.sweep {
                out.push_str(&format!(
                    "  M = {:>4} seed {:>2}  accuracy {:.3}\n",
                    p.traces_m, p.seed, p.accuracy
                ));
            }
        }
        out
    }
}
