//! The six subcommands. Each binds one JSON config document, produces files
//! atomically, and prints a short machine-greppable summary.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::json;

use corrnoise::dtype::Dtype;
use corrnoise::emb::{
    build_schedule, precompute_coalesced, split_hot_cold, store_provenance, threshold_sweep,
    HotColdSplit, TileSpec,
};
use corrnoise::mixing::{load_matrix, MatrixDocument, MixingMatrix};
use corrnoise::noise::{next_correlated_noise, regen_oracle, sample_raw_noise, NoiseHistory, NoisePlan, SubsetEngine};
use corrnoise::rng::SplitMix64;
use corrnoise::sim::{append_csv, compare_strategies, CostModelConfig, EmbStats, CSV_HEADER};
use corrnoise::store::CoalescedNoiseStore;
use corrnoise::trace::{generate_zipf_trace, ingest_trace_file, AccessTrace, TraceConfig};
use corrnoise::trainer::{
    compare_runs, train_eager, train_lazy, write_table, DiffReport, ToyModel, TrainRun,
};

use crate::config::{hex, path_with_suffix, write_atomic};
use crate::{CmdError, CmdResult};

// ---------------------------------------------------------------------------
// shared config sections

fn default_sigma() -> f64 {
    1.0
}

fn default_dtype() -> Dtype {
    Dtype::F64
}

/// Noise-stream parameters; element count and iteration count come from the
/// trace and matrix so they cannot drift apart.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub seed: u64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
}

/// A mixing matrix given inline or as a path to a matrix document.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MixingSource {
    Path(PathBuf),
    Inline(MatrixDocument),
}

impl MixingSource {
    fn build(&self) -> CmdResult<MixingMatrix> {
        match self {
            MixingSource::Path(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading matrix {}", p.display()))
                    .map_err(CmdError::io)?;
                Ok(load_matrix(&text)?)
            }
            MixingSource::Inline(doc) => Ok(doc.build()?),
        }
    }
}

/// A trace given as a generator config or as a path to a trace file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TraceSource {
    Path(PathBuf),
    Config(TraceConfig),
}

impl TraceSource {
    fn build(&self) -> CmdResult<AccessTrace> {
        match self {
            TraceSource::Path(p) => Ok(ingest_trace_file(p, None)?),
            TraceSource::Config(cfg) => Ok(generate_zipf_trace(cfg)?),
        }
    }
}

// ---------------------------------------------------------------------------
// gen-mixing

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenMixingConfig {
    pub n: usize,
    pub band: usize,
    #[serde(default)]
    pub toeplitz: Option<Vec<f64>>,
    #[serde(default)]
    pub rows: Option<Vec<corrnoise::mixing::DocumentRow>>,
    pub out: PathBuf,
}

pub fn cmd_gen_mixing(cfg: GenMixingConfig) -> CmdResult<()> {
    let doc = MatrixDocument {
        n: cfg.n,
        band: cfg.band,
        toeplitz: cfg.toeplitz,
        rows: cfg.rows,
    };
    let matrix = doc.build()?;
    let text = serde_json::to_string_pretty(&doc).map_err(CmdError::config)?;
    write_atomic(&cfg.out, text.as_bytes()).map_err(CmdError::from)?;
    println!(
        "wrote mixing matrix n={} band={} digest={} -> {}",
        matrix.n(),
        matrix.band(),
        hex(&matrix.digest()[..8]),
        cfg.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-trace

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenTraceConfig {
    pub trace: TraceConfig,
    /// When present, one trace file is emitted per alpha, with the alpha
    /// embedded in the filename.
    #[serde(default)]
    pub alpha_sweep: Option<Vec<f64>>,
    pub out: PathBuf,
}

pub fn cmd_gen_trace(cfg: GenTraceConfig) -> CmdResult<()> {
    let alphas = match &cfg.alpha_sweep {
        Some(list) if !list.is_empty() => list.clone(),
        _ => vec![cfg.trace.zipf_alpha],
    };
    let sweeping = cfg.alpha_sweep.as_ref().is_some_and(|l| !l.is_empty());
    for alpha in alphas {
        let tcfg = TraceConfig {
            zipf_alpha: alpha,
            ..cfg.trace.clone()
        };
        let trace = generate_zipf_trace(&tcfg)?;
        let path = if sweeping {
            path_with_suffix(&cfg.out, &format!("_alpha{alpha}"))
        } else {
            cfg.out.clone()
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(CmdError::from)?;
            }
        }
        let gzip = path.extension().is_some_and(|e| e == "gz");
        write_atomic(&path, &trace.export_bytes(gzip)?).map_err(CmdError::from)?;
        println!(
            "wrote trace entries={} iterations={} digest={} -> {}",
            trace.entries(),
            trace.iterations(),
            hex(&trace.content_digest()[..8]),
            path.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// precompute

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecomputeConfig {
    pub plan: PlanSection,
    pub mixing: MixingSource,
    pub trace: TraceSource,
    /// Embedding dimension (elements per entry).
    pub dim: usize,
    /// Access-count threshold; entries at or above it take the eager path.
    pub threshold: u64,
    /// GPU working-set budget for the tiled pre-computation; absent means a
    /// single tile.
    #[serde(default)]
    pub tile_budget_bytes: Option<u64>,
    /// Candidate thresholds to report alongside the chosen one.
    #[serde(default)]
    pub threshold_sweep: Option<Vec<u64>>,
    pub out_store: PathBuf,
    pub out_stats: PathBuf,
}

struct BuiltStore {
    plan: NoisePlan,
    matrix: MixingMatrix,
    trace: AccessTrace,
    split: HotColdSplit,
    tiles: TileSpec,
    store: CoalescedNoiseStore,
}

fn build_store(
    plan: &PlanSection,
    mixing: &MixingSource,
    trace_src: &TraceSource,
    dim: usize,
    threshold: u64,
    tile_budget_bytes: Option<u64>,
) -> CmdResult<BuiltStore> {
    if dim == 0 {
        return Err(CmdError::config(anyhow!("dim must be positive")));
    }
    let matrix = mixing.build()?;
    let trace = trace_src.build()?;
    let plan = NoisePlan {
        seed: plan.seed,
        elems: trace.entries() as usize * dim,
        iterations: trace.iterations(),
        band: matrix.band(),
        sigma: plan.sigma,
        dtype: plan.dtype,
    };
    let split = split_hot_cold(&trace.frequency_histogram(), threshold);
    let cold_elems = split.cold_entries().len() * dim;
    let tiles = match tile_budget_bytes {
        Some(budget) => corrnoise::emb::tile_size_solver(budget, plan.band, cold_elems, dim, plan.dtype)?,
        None => TileSpec::explicit(cold_elems.max(dim), dim, cold_elems)?,
    };
    let store = precompute_coalesced(&plan, &matrix, &trace, &split, &tiles)?;
    Ok(BuiltStore {
        plan,
        matrix,
        trace,
        split,
        tiles,
        store,
    })
}

pub fn cmd_precompute(cfg: PrecomputeConfig) -> CmdResult<()> {
    let built = build_store(
        &cfg.plan,
        &cfg.mixing,
        &cfg.trace,
        cfg.dim,
        cfg.threshold,
        cfg.tile_budget_bytes,
    )?;
    let store = &built.store;
    if store.nnz() == 0 {
        eprintln!("warning: threshold {} marks every entry hot; the store is empty", cfg.threshold);
    }
    let mut bytes = Vec::new();
    store.write_to(&mut bytes)?;
    write_atomic(&cfg.out_store, &bytes).map_err(CmdError::from)?;

    let sweep = match &cfg.threshold_sweep {
        Some(ts) => Some(threshold_sweep(&built.trace, ts)?),
        None => None,
    };
    let stats = json!({
        "measured": {
            "entries": store.entries(),
            "iterations": store.iterations(),
            "dim": store.dim(),
            "nnz": store.nnz(),
            "avg_noise_entries": store.avg_noise_entries(),
            "payload_bytes": store.payload_bytes(),
            "index_bytes": store.index_bytes(),
            "file_bytes": store.file_bytes(),
            "hot_count": built.split.hot_count(),
            "hot_fraction": built.split.hot_fraction(),
            "cold_entries": built.split.cold_entries().len(),
            "threshold": cfg.threshold,
            "tile_elems": built.tiles.tile_elems,
            "tile_count": built.tiles.tile_count(),
            "provenance": hex(store.provenance()),
            "threshold_sweep": sweep,
        }
    });
    let text = serde_json::to_string_pretty(&stats).map_err(CmdError::config)?;
    write_atomic(&cfg.out_stats, text.as_bytes()).map_err(CmdError::from)?;
    println!(
        "wrote store nnz={} avg_noise_entries={} payload_bytes={} -> {}",
        store.nnz(),
        store.avg_noise_entries(),
        store.payload_bytes(),
        cfg.out_store.display()
    );
    println!("wrote stats -> {}", cfg.out_stats.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub factorization: FactorizationSection,
    pub engine: EngineSection,
    pub emb: EmbSection,
    /// Optional store file checked against a reference rebuilt from `emb`.
    pub store: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorizationSection {
    pub cases: usize,
    pub max_n: usize,
    pub max_m: usize,
    pub bands: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineSection {
    pub n: usize,
    pub m: usize,
    pub band: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbSection {
    pub plan: PlanSection,
    pub mixing: MixingSource,
    pub trace: TraceSource,
    pub dim: usize,
    pub threshold: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            factorization: Default::default(),
            engine: Default::default(),
            emb: Default::default(),
            store: None,
        }
    }
}

impl Default for FactorizationSection {
    fn default() -> Self {
        Self {
            cases: 12,
            max_n: 48,
            max_m: 128,
            bands: vec![1, 2, 4, 8],
        }
    }
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            n: 48,
            m: 96,
            band: 8,
        }
    }
}

impl Default for EmbSection {
    fn default() -> Self {
        Self {
            plan: PlanSection {
                seed: 1002,
                sigma: 1.0,
                dtype: Dtype::F64,
            },
            mixing: MixingSource::Inline(MatrixDocument {
                n: 24,
                band: 3,
                toeplitz: Some(vec![1.0, -0.45, 0.2]),
                rows: None,
            }),
            trace: TraceSource::Config(TraceConfig {
                entries: 32,
                iterations: 24,
                batch_size: 4,
                pooling: 2,
                zipf_alpha: 1.1,
                seed: 1001,
            }),
            dim: 3,
            threshold: 6,
        }
    }
}

fn random_banded(rng: &mut SplitMix64, n: usize, band: usize) -> MixingMatrix {
    let scale = 0.5 / band as f64;
    let rows = (0..n)
        .map(|t| {
            let len = t.min(band - 1);
            let coeffs = (0..len).map(|_| (rng.unit() - 0.5) * 2.0 * scale).collect();
            let sign = if rng.unit() < 0.5 { -1.0 } else { 1.0 };
            (coeffs, sign * (0.5 + 1.5 * rng.unit()))
        })
        .collect();
    MixingMatrix::from_rows(n, band, rows).unwrap()
}

type SuiteResult = Result<String, String>;

fn suite_factorization(cfg: &VerifyConfig) -> SuiteResult {
    let mut rng = SplitMix64::derive(cfg.seed, 1);
    let f = &cfg.factorization;
    let mut max_rel: f64 = 0.0;
    for case in 0..f.cases {
        let band = f.bands[case % f.bands.len()];
        let n = band + rng.below((f.max_n - band + 1) as u64) as usize;
        let m = 1 + rng.below(f.max_m as u64) as usize;
        let plan = NoisePlan {
            seed: rng.next_u64(),
            elems: m,
            iterations: n,
            band,
            sigma: 1.0,
            dtype: Dtype::F64,
        };
        let matrix = random_banded(&mut rng, n, band);
        let mut hist = NoiseHistory::new(band, m);
        let mut outputs = Vec::with_capacity(n);
        for t in 0..n {
            match next_correlated_noise(&plan, &matrix, &mut hist, t) {
                Ok(out) => outputs.push(out.values),
                Err(e) => return Err(format!("engine failed at step {t}: {e}")),
            }
        }
        for t in 0..n {
            let z = sample_raw_noise(&plan, t, 0, m).unwrap();
            for i in 0..m {
                let mut lhs = matrix.diag(t) * outputs[t][i];
                for (k, &c) in matrix.coeffs(t).iter().enumerate() {
                    lhs += c * outputs[t - 1 - k][i];
                }
                max_rel = max_rel.max((lhs - z[i]).abs() / z[i].abs().max(1.0));
            }
        }
    }
    if max_rel <= 1e-9 {
        Ok(format!("{} configs, max rel err {max_rel:.2e}", f.cases))
    } else {
        Err(format!("max rel err {max_rel:.2e} > 1e-9"))
    }
}

fn suite_dpsgd_reduction(cfg: &VerifyConfig) -> SuiteResult {
    let e = &cfg.engine;
    let plan = NoisePlan {
        seed: cfg.seed ^ 0xd5,
        elems: e.m,
        iterations: e.n,
        band: 1,
        sigma: 1.0,
        dtype: Dtype::F64,
    };
    let matrix = MixingMatrix::identity(e.n).map_err(|e| e.to_string())?;
    let mut hist = NoiseHistory::new(1, e.m);
    for t in 0..e.n {
        let out = next_correlated_noise(&plan, &matrix, &mut hist, t).map_err(|e| e.to_string())?;
        let raw = sample_raw_noise(&plan, t, 0, e.m).unwrap();
        if out.values.iter().zip(&raw).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("band-1 output differs from raw noise at step {t}"));
        }
    }
    Ok(format!("band 1 bit-equal over {} steps", e.n))
}

fn suite_streaming_vs_regen(cfg: &VerifyConfig) -> SuiteResult {
    let e = &cfg.engine;
    let mut rng = SplitMix64::derive(cfg.seed, 2);
    let plan = NoisePlan {
        seed: rng.next_u64(),
        elems: e.m,
        iterations: e.n,
        band: e.band.min(e.n),
        sigma: 1.0,
        dtype: Dtype::F64,
    };
    let matrix = random_banded(&mut rng, e.n, plan.band);
    let mut hist = NoiseHistory::new(plan.band, e.m);
    for t in 0..e.n {
        let streamed =
            next_correlated_noise(&plan, &matrix, &mut hist, t).map_err(|e| e.to_string())?;
        let regen = regen_oracle(&plan, &matrix, t).map_err(|e| e.to_string())?;
        if streamed
            .values
            .iter()
            .zip(&regen.values)
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(format!("streaming and regen diverge at step {t}"));
        }
    }
    Ok(format!("bit-equal over n={} m={} band={}", e.n, e.m, plan.band))
}

fn suite_toy_coalescing() -> SuiteResult {
    let trace = AccessTrace::from_sets(3, vec![vec![1], vec![2], vec![1], vec![0, 2]])
        .map_err(|e| e.to_string())?;
    let split = split_hot_cold(&trace.frequency_histogram(), u64::MAX);
    let schedule = build_schedule(&trace, &split).map_err(|e| e.to_string())?;
    if schedule.event_count() != 7 {
        return Err(format!("toy trace produced {} events, want 7", schedule.event_count()));
    }
    Ok("3x4 toy trace coalesces to 7 events (avg 1.75)".to_string())
}

struct EmbArtifacts {
    plan: NoisePlan,
    matrix: MixingMatrix,
    trace: AccessTrace,
    split: HotColdSplit,
    store: CoalescedNoiseStore,
}

fn build_emb(cfg: &VerifyConfig) -> Result<EmbArtifacts, String> {
    let e = &cfg.emb;
    let built = build_store(&e.plan, &e.mixing, &e.trace, e.dim, e.threshold, None)
        .map_err(|err| err.err.to_string())?;
    Ok(EmbArtifacts {
        plan: built.plan,
        matrix: built.matrix,
        trace: built.trace,
        split: built.split,
        store: built.store,
    })
}

fn suite_conservation_and_tiling(cfg: &VerifyConfig, art: &EmbArtifacts) -> SuiteResult {
    let dim = art.store.dim();
    let mut engine = SubsetEngine::full(&art.plan, &art.matrix).map_err(|e| e.to_string())?;
    let mut total = vec![0.0; art.plan.elems];
    for _ in 0..art.plan.iterations {
        let step = engine.step().map_err(|e| e.to_string())?;
        for (a, v) in total.iter_mut().zip(&step.values) {
            *a += v;
        }
    }
    let mut event_sums = vec![0.0; art.plan.elems];
    for c in 0..=art.store.iterations() {
        for ev in art.store.column(c).unwrap() {
            let base = ev.entry as usize * dim;
            for j in 0..dim {
                event_sums[base + j] += ev.value[j];
            }
        }
    }
    let mut max_rel: f64 = 0.0;
    for &e in &art.split.cold_entries() {
        for j in 0..dim {
            let k = e as usize * dim + j;
            max_rel = max_rel.max((event_sums[k] - total[k]).abs() / total[k].abs().max(1.0));
        }
    }
    if max_rel > 1e-9 {
        return Err(format!("conservation violated: max rel {max_rel:.2e}"));
    }
    // per-entry tiling must reproduce the single-tile store exactly
    let cold_elems = art.split.cold_entries().len() * dim;
    if cold_elems > 0 {
        let tiles = TileSpec::explicit(dim, dim, cold_elems).map_err(|e| e.to_string())?;
        let retiled =
            precompute_coalesced(&art.plan, &art.matrix, &art.trace, &art.split, &tiles)
                .map_err(|e| e.to_string())?;
        if retiled != art.store {
            return Err("per-entry tiling changed the store".to_string());
        }
    }
    let _ = cfg;
    Ok(format!("conservation max rel {max_rel:.2e}; tiling invariant"))
}

fn suite_eager_lazy(cfg: &VerifyConfig, art: &EmbArtifacts, store: &CoalescedNoiseStore) -> SuiteResult {
    let model = ToyModel::seeded(art.trace.entries(), art.store.dim(), 0.05, 0.2, cfg.seed ^ 0xe1);
    let eager = train_eager(&model, &art.plan, &art.matrix, &art.trace).map_err(|e| e.to_string())?;
    let lazy = train_lazy(&model, &art.plan, &art.matrix, &art.trace, &art.split, store)
        .map_err(|e| e.to_string())?;
    let diff = compare_runs(&eager, &lazy).map_err(|e| e.to_string())?;
    if diff.max_rel > 1e-9 {
        return Err(format!(
            "eager and lazy tables diverge: max rel {:.2e}",
            diff.max_rel
        ));
    }
    // band-1 fast path: same check with the identity matrix
    let n = art.trace.iterations();
    let id = MixingMatrix::identity(n).map_err(|e| e.to_string())?;
    let plan1 = NoisePlan {
        band: 1,
        ..art.plan.clone()
    };
    let tiles = TileSpec::explicit(
        (art.split.cold_entries().len() * art.store.dim()).max(art.store.dim()),
        art.store.dim(),
        art.split.cold_entries().len() * art.store.dim(),
    )
    .map_err(|e| e.to_string())?;
    let store1 = precompute_coalesced(&plan1, &id, &art.trace, &art.split, &tiles)
        .map_err(|e| e.to_string())?;
    let eager1 = train_eager(&model, &plan1, &id, &art.trace).map_err(|e| e.to_string())?;
    let lazy1 = train_lazy(&model, &plan1, &id, &art.trace, &art.split, &store1)
        .map_err(|e| e.to_string())?;
    let diff1 = compare_runs(&eager1, &lazy1).map_err(|e| e.to_string())?;
    if diff1.max_rel > 1e-9 {
        return Err(format!("band-1 fast path diverges: {:.2e}", diff1.max_rel));
    }
    Ok(format!(
        "max rel {:.2e} (banded), {:.2e} (band-1 fast path)",
        diff.max_rel, diff1.max_rel
    ))
}

fn suite_store_file(art: &EmbArtifacts, path: &Path) -> SuiteResult {
    let loaded = CoalescedNoiseStore::load(path).map_err(|e| e.to_string())?;
    if loaded.provenance() != &store_provenance(&art.plan, &art.matrix, &art.trace, &art.split) {
        return Err("store provenance does not match the verify inputs".to_string());
    }
    if loaded != art.store {
        return Err("store content differs from the rebuilt reference".to_string());
    }
    Ok(format!("{} matches the rebuilt reference", path.display()))
}

pub fn cmd_verify(cfg: VerifyConfig) -> CmdResult<bool> {
    let mut all_ok = true;
    let mut report = |name: &str, outcome: SuiteResult| {
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                all_ok = false;
                println!("[FAIL] {name}: {why}");
            }
        }
    };
    report("factorization", suite_factorization(&cfg));
    report("dp-sgd-reduction", suite_dpsgd_reduction(&cfg));
    report("streaming-vs-regen", suite_streaming_vs_regen(&cfg));
    report("toy-coalescing", suite_toy_coalescing());
    match build_emb(&cfg) {
        Ok(art) => {
            report(
                "conservation-and-tiling",
                suite_conservation_and_tiling(&cfg, &art),
            );
            match &cfg.store {
                Some(path) => {
                    report("store-file", suite_store_file(&art, path));
                    match CoalescedNoiseStore::load(path) {
                        Ok(loaded) => report("eager-lazy", suite_eager_lazy(&cfg, &art, &loaded)),
                        Err(e) => report("eager-lazy", Err(format!("cannot load store: {e}"))),
                    }
                }
                None => report("eager-lazy", suite_eager_lazy(&cfg, &art, &art.store)),
            }
        }
        Err(why) => {
            report("conservation-and-tiling", Err(why.clone()));
            report("eager-lazy", Err(why));
        }
    }
    Ok(all_ok)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Cost-model parameters; defaults to the documented assumption set.
    #[serde(default)]
    pub cost: Option<CostModelConfig>,
    /// Store file whose statistics enable the pre-compute strategy row.
    #[serde(default)]
    pub emb_store: Option<PathBuf>,
    /// Sweep axes: dot paths into the cost document, evaluated as a
    /// cartesian product.
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub out_csv: Option<PathBuf>,
    #[serde(default)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Serialize)]
struct SweepPointReport {
    point: serde_json::Map<String, serde_json::Value>,
    table: corrnoise::sim::StrategyTable,
}

pub fn cmd_simulate(cfg: SimulateConfig) -> CmdResult<()> {
    let explicit_cost = cfg.cost.is_some();
    let mut cost = cfg.cost.unwrap_or_else(CostModelConfig::default_dlrm);
    if let Some(path) = &cfg.emb_store {
        let store = CoalescedNoiseStore::load(path)?;
        let stats = EmbStats::from_store(&store);
        let store_elems = store.entries() * store.dim() as u64;
        if explicit_cost {
            if cost.elems != stats.cold_elems + stats.hot_elems {
                eprintln!(
                    "warning: cost.elems = {} but the store covers {} noise elements",
                    cost.elems, store_elems
                );
            }
        } else {
            // Default parameters, concrete store: size the model to it.
            cost.elems = store_elems;
            cost.iterations = store.iterations() as u64;
        }
        cost.emb = Some(stats);
    }
    let base = serde_json::to_value(&cost).map_err(CmdError::config)?;

    // Cartesian product over sweep axes (empty sweep = one base point).
    let mut points: Vec<serde_json::Map<String, serde_json::Value>> =
        vec![serde_json::Map::new()];
    for axis in &cfg.sweep {
        if axis.values.is_empty() {
            return Err(CmdError::config(anyhow!("sweep axis {} has no values", axis.path)));
        }
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for v in &axis.values {
                let mut p = point.clone();
                p.insert(axis.path.clone(), v.clone());
                next.push(p);
            }
        }
        points = next;
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut json_reports = Vec::with_capacity(points.len());
    for point in points {
        let mut doc = base.clone();
        for (path, value) in &point {
            crate::config::apply_override(&mut doc, path, value.clone())
                .map_err(CmdError::config)?;
        }
        let point_cfg: CostModelConfig =
            serde_json::from_value(doc).map_err(CmdError::config)?;
        let table = compare_strategies(&point_cfg)?;
        append_csv(&mut csv, &table);
        println!(
            "band={} m={} best={}",
            table.band, table.elems, table.best
        );
        json_reports.push(SweepPointReport { point, table });
    }
    if let Some(path) = &cfg.out_csv {
        write_atomic(path, csv.as_bytes()).map_err(CmdError::from)?;
        println!("wrote csv -> {}", path.display());
    }
    if let Some(path) = &cfg.out_json {
        let text = serde_json::to_string_pretty(&json_reports).map_err(CmdError::config)?;
        write_atomic(path, text.as_bytes()).map_err(CmdError::from)?;
        println!("wrote json -> {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train-toy

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TrainToyMode {
    Eager,
    Lazy,
    Both,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainToyConfig {
    pub plan: PlanSection,
    pub mixing: MixingSource,
    pub trace: TraceSource,
    pub dim: usize,
    /// Hot/cold threshold for the lazy path; default marks everything cold.
    #[serde(default = "all_cold_threshold")]
    pub threshold: u64,
    pub learning_rate: f64,
    pub noise_coefficient: f64,
    #[serde(default)]
    pub table_seed: u64,
    pub mode: TrainToyMode,
    /// Pre-built store for the lazy path; built in memory when absent.
    #[serde(default)]
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub out_table: Option<PathBuf>,
    #[serde(default)]
    pub out_report: Option<PathBuf>,
}

fn all_cold_threshold() -> u64 {
    u64::MAX
}

pub fn cmd_train_toy(cfg: TrainToyConfig) -> CmdResult<()> {
    let matrix = cfg.mixing.build()?;
    let trace = cfg.trace.build()?;
    let plan = NoisePlan {
        seed: cfg.plan.seed,
        elems: trace.entries() as usize * cfg.dim,
        iterations: trace.iterations(),
        band: matrix.band(),
        sigma: cfg.plan.sigma,
        dtype: cfg.plan.dtype,
    };
    let model = ToyModel::seeded(
        trace.entries(),
        cfg.dim,
        cfg.learning_rate,
        cfg.noise_coefficient,
        cfg.table_seed,
    );

    let mut eager_run: Option<TrainRun> = None;
    let mut lazy_run: Option<TrainRun> = None;
    if cfg.mode != TrainToyMode::Lazy {
        eager_run = Some(train_eager(&model, &plan, &matrix, &trace)?);
    }
    let mut store_stats = None;
    if cfg.mode != TrainToyMode::Eager {
        let split = split_hot_cold(&trace.frequency_histogram(), cfg.threshold);
        let store = match &cfg.store {
            Some(path) => CoalescedNoiseStore::load(path)?,
            None => {
                let cold_elems = split.cold_entries().len() * cfg.dim;
                let tiles = TileSpec::explicit(cold_elems.max(cfg.dim), cfg.dim, cold_elems)?;
                precompute_coalesced(&plan, &matrix, &trace, &split, &tiles)?
            }
        };
        store_stats = Some(json!({
            "nnz": store.nnz(),
            "avg_noise_entries": store.avg_noise_entries(),
            "payload_bytes": store.payload_bytes(),
        }));
        lazy_run = Some(train_lazy(&model, &plan, &matrix, &trace, &split, &store)?);
    }

    let diff: Option<DiffReport> = match (&eager_run, &lazy_run) {
        (Some(e), Some(l)) => {
            let d = compare_runs(e, l)?;
            println!(
                "eager vs lazy: max_abs={:.3e} max_rel={:.3e}",
                d.max_abs, d.max_rel
            );
            Some(d)
        }
        _ => None,
    };

    if let Some(out) = &cfg.out_table {
        let write_run = |run: &TrainRun, path: &Path| -> CmdResult<()> {
            let mut bytes = Vec::new();
            write_table(&run.final_table, run.entries, run.dim, plan.dtype, &mut bytes)?;
            write_atomic(path, &bytes).map_err(CmdError::from)?;
            println!("wrote table -> {}", path.display());
            Ok(())
        };
        match (&eager_run, &lazy_run) {
            (Some(e), Some(l)) => {
                write_run(e, &path_with_suffix(out, ".eager"))?;
                write_run(l, &path_with_suffix(out, ".lazy"))?;
            }
            (Some(run), None) | (None, Some(run)) => write_run(run, out)?,
            (None, None) => unreachable!(),
        }
    }
    if let Some(out) = &cfg.out_report {
        let report = json!({
            "mode": match cfg.mode {
                TrainToyMode::Eager => "eager",
                TrainToyMode::Lazy => "lazy",
                TrainToyMode::Both => "both",
            },
            "entries": trace.entries(),
            "dim": cfg.dim,
            "iterations": trace.iterations(),
            "band": plan.band,
            "diff": diff,
            "store": store_stats,
        });
        let text = serde_json::to_string_pretty(&report).map_err(CmdError::config)?;
        write_atomic(out, text.as_bytes()).map_err(CmdError::from)?;
        println!("wrote report -> {}", out.display());
    }
    Ok(())
}
