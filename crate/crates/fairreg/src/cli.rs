//! Command-line interface. Every flag can also be set through an
//! environment variable named `FAIRREG_<FLAG>` (upper case, `-` → `_`).
//! Exit codes: 0 success, 1 data or validation failure, 2 usage error.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use fairreg_core::constraint::{ConstraintConfig, FairnessSpec, Representation};
use fairreg_core::data::{split, synth_beta_demo, GroupPair, GroupQuery, GroupSpec, SynthParams};
use fairreg_core::ensemble::{fit_boost_trees, fit_forest_trees, BoostParams, ForestParams};
use fairreg_core::groupmass::{Estimator, GmmConfig};
use fairreg_core::kernelgp::{Kernel, KernelRegression};
use fairreg_core::tree::{RegressionTree, TreeParams};

use crate::audit::{audit, predict_all, side_paths, write_histograms, write_points};
use crate::compas;
use crate::model::{FitRecord, Member, Model, ModelFile};
use crate::table::{dataset_to_table, load_csv, Table};
use crate::verify::{alternating_z, verify};

#[derive(Debug, Parser)]
#[command(
    name = "fairreg",
    version,
    about = "Group-fair tree, ensemble and kernel regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an unconstrained tree, forest, boosted ensemble or RBF GP.
    Fit(FitArgs),
    /// Apply group-fairness constraints to a fitted model.
    Constrain(ConstrainArgs),
    /// Append a `prediction` column to a CSV.
    Predict(PredictArgs),
    /// Compare group means before and after the constraint.
    Audit(AuditArgs),
    /// Monte Carlo check of the perturbation bounds.
    VerifyBounds(VerifyArgs),
    /// Write the two-population Beta demo dataset.
    Synth(SynthArgs),
    /// Filter and encode the ProPublica COMPAS CSV.
    PrepareCompas(CompasArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, env = "FAIRREG_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "FAIRREG_TARGET")]
    pub target: String,
    /// Categorical columns used for group queries (excluded from features).
    #[arg(long, env = "FAIRREG_GROUPS", value_delimiter = ',')]
    pub groups: Vec<String>,
    /// Feature columns; defaults to every non-target, non-group column.
    #[arg(long, env = "FAIRREG_FEATURES", value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long, env = "FAIRREG_MODEL_OUT")]
    pub model_out: PathBuf,
    /// Number of trees; more than one gives a forest.
    #[arg(long, env = "FAIRREG_TREES", default_value_t = 1)]
    pub trees: usize,
    /// Fit forest members on bootstrap resamples.
    #[arg(long, env = "FAIRREG_BOOTSTRAP")]
    pub bootstrap: bool,
    /// Number of boosting stages.
    #[arg(long, env = "FAIRREG_BOOST", conflicts_with_all = ["trees", "bootstrap", "gp"])]
    pub boost: Option<usize>,
    #[arg(long, env = "FAIRREG_LEARNING_RATE", default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, env = "FAIRREG_DEPTH", default_value_t = 6)]
    pub depth: usize,
    #[arg(long, env = "FAIRREG_MIN_LEAF", default_value_t = 5)]
    pub min_leaf: usize,
    /// Fraction of features considered at each split.
    #[arg(long, env = "FAIRREG_FEATURE_SUBSAMPLE", default_value_t = 1.0)]
    pub feature_subsample: f64,
    /// Fit an RBF Gaussian process instead of trees.
    #[arg(long, env = "FAIRREG_GP", conflicts_with_all = ["trees", "bootstrap"])]
    pub gp: bool,
    #[arg(long, env = "FAIRREG_LENGTHSCALE", default_value_t = 0.1)]
    pub lengthscale: f64,
    #[arg(long, env = "FAIRREG_AMPLITUDE", default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, env = "FAIRREG_GP_NOISE", default_value_t = 0.01)]
    pub gp_noise: f64,
    /// Tree `i` / stage `t` uses seed `seed + i`.
    #[arg(long, env = "FAIRREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Empirical,
    Gmm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RepresentationArg {
    Compressed,
    Explicit,
}

fn parse_pair(s: &str) -> std::result::Result<GroupPair, String> {
    let (a, b) = s.split_once(':').ok_or("expected QUERY_A:QUERY_B")?;
    Ok(GroupPair::new(
        a.parse().map_err(|e| format!("{e}"))?,
        b.parse().map_err(|e| format!("{e}"))?,
    ))
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("constraints").required(true).args(["group_a", "pair"]).multiple(true)))]
pub struct ConstrainArgs {
    #[arg(long, env = "FAIRREG_MODEL")]
    pub model: PathBuf,
    /// Training data used to compute leaf masses.
    #[arg(long, env = "FAIRREG_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "FAIRREG_GROUP_A", requires = "group_b")]
    pub group_a: Option<GroupQuery>,
    #[arg(long, env = "FAIRREG_GROUP_B", requires = "group_a")]
    pub group_b: Option<GroupQuery>,
    /// Additional constraint `QUERY_A:QUERY_B`; repeatable.
    #[arg(long, value_parser = parse_pair)]
    pub pair: Vec<GroupPair>,
    #[arg(
        long,
        env = "FAIRREG_ESTIMATOR",
        value_enum,
        default_value = "empirical"
    )]
    pub estimator: EstimatorArg,
    #[arg(long, env = "FAIRREG_GMM_K", default_value_t = 2)]
    pub gmm_k: usize,
    #[arg(
        long,
        env = "FAIRREG_REPRESENTATION",
        value_enum,
        default_value = "compressed"
    )]
    pub representation: RepresentationArg,
    /// Noise variance σ².
    #[arg(long, env = "FAIRREG_NOISE", default_value_t = 1.0)]
    pub noise: f64,
    /// Keep the 1/(1+σ²) prior shrinkage (compressed representation).
    #[arg(long, env = "FAIRREG_KEEP_PRIOR")]
    pub keep_prior: bool,
    #[arg(long, env = "FAIRREG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "FAIRREG_MODEL_OUT")]
    pub model_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, env = "FAIRREG_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "FAIRREG_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "FAIRREG_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, env = "FAIRREG_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "FAIRREG_DATA")]
    pub data: PathBuf,
    /// Report path; histogram and point CSVs are written next to it.
    #[arg(long, env = "FAIRREG_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "FAIRREG_HIST_BINS", default_value_t = 20)]
    pub hist_bins: usize,
    /// Groups to compare when the model carries no constraint.
    #[arg(long, env = "FAIRREG_GROUP_A", requires = "group_b")]
    pub group_a: Option<GroupQuery>,
    #[arg(long, env = "FAIRREG_GROUP_B", requires = "group_a")]
    pub group_b: Option<GroupQuery>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["model", "leaves"])))]
pub struct VerifyArgs {
    /// Use the first constraint column of the model's first tree.
    #[arg(long, env = "FAIRREG_MODEL")]
    pub model: Option<PathBuf>,
    /// Synthetic leaf count with alternating ±1 z.
    #[arg(long = "L", env = "FAIRREG_L")]
    pub leaves: Option<usize>,
    #[arg(long, env = "FAIRREG_SAMPLES", default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, env = "FAIRREG_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Rows per leaf for the explicit-representation report.
    #[arg(long, env = "FAIRREG_LEAF_COUNT", default_value_t = 1)]
    pub leaf_count: usize,
    #[arg(long, env = "FAIRREG_NOISE", default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, env = "FAIRREG_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "FAIRREG_ALPHA")]
    pub alpha: f64,
    #[arg(long, env = "FAIRREG_BETA")]
    pub beta: f64,
    /// Rows per group.
    #[arg(long, env = "FAIRREG_N", default_value_t = 500)]
    pub n: usize,
    /// Standard deviation of the observation noise.
    #[arg(long, env = "FAIRREG_NOISE", default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, env = "FAIRREG_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "FAIRREG_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompasArgs {
    /// Raw `compas-scores-two-years.csv`.
    #[arg(long, env = "FAIRREG_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "FAIRREG_OUT")]
    pub out: PathBuf,
    /// Also write a held-out split here.
    #[arg(long, env = "FAIRREG_TEST_OUT", requires = "test_fraction")]
    pub test_out: Option<PathBuf>,
    #[arg(long, env = "FAIRREG_TEST_FRACTION", requires = "test_out")]
    pub test_fraction: Option<f64>,
    #[arg(long, env = "FAIRREG_SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Constrain(a) => cmd_constrain(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Audit(a) => cmd_audit(a),
        Command::VerifyBounds(a) => cmd_verify_bounds(a),
        Command::Synth(a) => cmd_synth(a),
        Command::PrepareCompas(a) => cmd_prepare_compas(a),
    }
}

pub fn cmd_fit(a: FitArgs) -> Result<()> {
    let (data, columns) = load_csv(&a.data, &a.target, &a.groups, a.features.as_deref())?;
    let tree = TreeParams {
        max_depth: a.depth,
        min_leaf_size: a.min_leaf,
        feature_subsample: a.feature_subsample,
    };
    let mut record = FitRecord {
        seed: a.seed,
        tree: Some(tree),
        bootstrap: a.bootstrap,
        n_rows: data.len(),
    };
    let model = if a.gp {
        record.tree = None;
        let kernel = Kernel::rbf(vec![a.lengthscale; data.n_features()], a.amplitude)?;
        let spec = KernelRegression {
            kernel,
            inputs: data.features().clone(),
            targets: data.targets().to_vec(),
            measure: None,
            noise_variance: a.gp_noise,
        };
        // factorize once so a bad configuration fails at fit time
        fairreg_core::kernelgp::ConstrainedKernelSystem::fit(spec.clone())?;
        Model::Gp(spec)
    } else if let Some(n_stages) = a.boost {
        let params = BoostParams {
            n_stages,
            learning_rate: a.learning_rate,
            tree,
        };
        let (init, stages) = fit_boost_trees(&data, &params, a.seed)?;
        Model::Boost {
            init,
            learning_rate: a.learning_rate,
            stages: stages.into_iter().map(Member::Unconstrained).collect(),
        }
    } else if a.trees > 1 {
        let params = ForestParams {
            n_trees: a.trees,
            tree,
            bootstrap: a.bootstrap,
        };
        Model::Forest {
            members: fit_forest_trees(&data, &params, a.seed)?
                .into_iter()
                .map(Member::Unconstrained)
                .collect(),
        }
    } else if a.trees == 1 {
        let t = if a.bootstrap {
            fit_forest_trees(
                &data,
                &ForestParams {
                    n_trees: 1,
                    tree,
                    bootstrap: true,
                },
                a.seed,
            )?
            .remove(0)
        } else {
            RegressionTree::fit(&data, tree, a.seed)?
        };
        Model::Tree(Member::Unconstrained(t))
    } else {
        bail!("--trees must be at least 1");
    };
    let file = ModelFile::new(columns, record, model);
    file.save(&a.model_out)?;
    println!(
        "wrote {:?} model to {}",
        file.model_kind,
        a.model_out.display()
    );
    Ok(())
}

pub fn cmd_constrain(a: ConstrainArgs) -> Result<()> {
    let mut file = ModelFile::load(&a.model)?;
    let (data, columns) = load_csv(
        &a.data,
        &file.columns.target,
        &file.columns.groups,
        Some(&file.columns.features),
    )?;
    debug_assert_eq!(columns, file.columns);
    let mut pairs = Vec::new();
    if let (Some(ga), Some(gb)) = (a.group_a, a.group_b) {
        pairs.push(GroupPair::new(ga, gb));
    }
    pairs.extend(a.pair);
    let estimator = match a.estimator {
        EstimatorArg::Empirical => Estimator::Empirical,
        EstimatorArg::Gmm => Estimator::Gmm(GmmConfig::new(a.gmm_k, a.seed)),
    };
    let config = match a.representation {
        RepresentationArg::Compressed => ConstraintConfig {
            representation: Representation::Compressed,
            noise_variance: a.noise,
            remove_prior: !a.keep_prior,
        },
        RepresentationArg::Explicit => ConstraintConfig::explicit(a.noise),
    };
    let spec = FairnessSpec {
        groups: GroupSpec { pairs },
        estimator,
        config,
    };
    file.constrain(&data, spec)?;
    let mut inactive = false;
    for (i, m) in file.model.members().iter().enumerate() {
        let c = m.constrained().expect("every member constrained");
        inactive |= !c.diagnostics().constraint_active;
        for (k, z) in c.z().columns().iter().enumerate() {
            println!(
                "member {i} constraint {k}: |z|_1 = {:.6e}, |z|_2 = {:.6e}, ratio = {:.6}",
                z.l1_norm(),
                z.l2_norm(),
                if z.is_zero() {
                    f64::NAN
                } else {
                    z.norm_ratio()
                }
            );
        }
        if !c.diagnostics().dropped_constraints.is_empty() {
            println!(
                "member {i}: dropped dependent constraints {:?}",
                c.diagnostics().dropped_constraints
            );
        }
    }
    if inactive {
        eprintln!(
            "warning: constraint inactive (z = 0) for at least one member; values left unchanged"
        );
    }
    file.save(&a.model_out)?;
    println!(
        "wrote constrained {:?} model to {}",
        file.model_kind,
        a.model_out.display()
    );
    Ok(())
}

pub fn cmd_predict(a: PredictArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let table = Table::read(&a.data)?;
    let x = table.numeric(&file.columns.features)?;
    let p = file.predictor()?;
    let mut out = table.clone();
    out.headers.push("prediction".to_string());
    for (i, row) in out.rows.iter_mut().enumerate() {
        row.push(p.predict(x.row(i))?.to_string());
    }
    out.write(&a.out)?;
    Ok(())
}

fn model_pairs(
    file: &ModelFile,
    a: Option<GroupQuery>,
    b: Option<GroupQuery>,
) -> Result<Vec<GroupPair>> {
    if let (Some(a), Some(b)) = (a, b) {
        return Ok(vec![GroupPair::new(a, b)]);
    }
    match &file.fairness {
        Some(f) => Ok(f.groups.pairs.clone()),
        None => bail!("model is unconstrained; pass --group-a and --group-b"),
    }
}

pub fn cmd_audit(a: AuditArgs) -> Result<()> {
    let file = ModelFile::load(&a.model)?;
    let table = Table::read(&a.data)?;
    let data = table.to_unlabelled(&file.columns.features, &file.columns.groups)?;
    let pairs = model_pairs(&file, a.group_a, a.group_b)?;
    let report = audit(&file, &data, &pairs, a.hist_bins)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    let (hist, points) = side_paths(&a.out);
    write_histograms(&report, &hist)?;
    write_points(&data, &predict_all(&file, &data)?, &points)?;
    for g in &report.groups {
        println!(
            "{}: mean before {:.6}, after {:.6} (n = {})",
            g.query, g.mean_before, g.mean_after, g.n_rows
        );
    }
    for c in &report.constraints {
        println!(
            "{} vs {}: residual {:.3e} -> {:.3e}",
            c.pair.a, c.pair.b, c.residual_before, c.residual_after
        );
    }
    println!("rms perturbation {:.6}", report.rms_perturbation);
    Ok(())
}

pub fn cmd_verify_bounds(a: VerifyArgs) -> Result<()> {
    let (z, leaf_count) = match (&a.model, a.leaves) {
        (Some(path), _) => {
            let file = ModelFile::load(path)?;
            let member = file
                .model
                .members()
                .first()
                .context("model has no tree members")?;
            let c = member
                .constrained()
                .context("model is unconstrained; run `constrain` first")?;
            (c.z().columns()[0].clone(), a.leaf_count)
        }
        (None, Some(l)) => (alternating_z(l)?, a.leaf_count),
        (None, None) => unreachable!("clap enforces one source"),
    };
    let report = verify(&z, a.samples, a.seed, leaf_count, a.noise)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(p) => {
            std::fs::write(p, &json).with_context(|| format!("cannot write {}", p.display()))?
        }
        None => print!("{json}"),
    }
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    if !report.passed {
        bail!(
            "bound check failed beyond {} standard errors",
            crate::verify::SE_MULTIPLIER
        );
    }
    Ok(())
}

pub fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut p = SynthParams::with_default_shapes(a.n, a.alpha, a.beta, a.seed);
    p.noise_std = a.noise;
    let data = synth_beta_demo(&p)?;
    dataset_to_table(&data, "y").write(&a.out)?;
    Ok(())
}

fn write_compas(table: &Table, path: &Path) -> Result<()> {
    table
        .write(path)
        .with_context(|| format!("cannot write {}", path.display()))
}

pub fn cmd_prepare_compas(a: CompasArgs) -> Result<()> {
    let raw = Table::read(&a.input)?;
    let prepared = compas::prepare(&raw)?;
    match (a.test_out, a.test_fraction) {
        (Some(test_out), Some(frac)) => {
            let data = prepared.to_dataset(&compas::column_spec())?;
            let (train, test) = split(&data, frac, a.seed)?;
            write_compas(&dataset_to_table(&train, compas::TARGET), &a.out)?;
            write_compas(&dataset_to_table(&test, compas::TARGET), &test_out)?;
            println!(
                "wrote {} training and {} held-out rows",
                train.len(),
                test.len()
            );
        }
        _ => {
            write_compas(&prepared, &a.out)?;
            println!("wrote {} rows", prepared.rows.len());
        }
    }
    Ok(())
}
