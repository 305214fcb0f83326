//! `partsec` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use partsec::adversary::{check_partitioned_security, exhaustive_audit, AuditTrace};
use partsec::binning::{create_bins, BinLayout, BinOptions};
use partsec::cost::{curves_csv, emit_curves, eta_report, layout_bin_sizes, CostConfig, SweepSpec};
use partsec::data::{classify_relation, PartitionedDataset, Relation, SensitivityPolicy, Value};
use partsec::demo::{run_demo, DemoName};
use partsec::hybrid::{
    enumerate_join_paths, execute_split_plan, split_query, HybridDataset, HybridQuery, JoinCondition, JoinQuery, JoinSource,
    Materialized, SelectQuery, SplitMode,
};
use partsec::public_exec::{Deployment, SelectionQuery};

const EXIT_VALIDATION: u8 = 2;
const EXIT_LEAKS: u8 = 3;

/// Marks an error as a problem with the user's input or policy.
#[derive(Debug)]
struct Invalid(anyhow::Error);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid<E: Into<anyhow::Error>>(e: E) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.into()))
}

#[derive(Parser)]
#[command(name = "partsec", version, about = "Partitioned computing over sensitive and non-sensitive data")]
struct Cli {
    /// Directory for artifacts.
    #[arg(long, global = true, env = "PARTSEC_OUT", default_value = "partsec-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DatasetArgs {
    /// CSV file of the relation.
    #[arg(long, conflicts_with = "dataset")]
    csv: Option<PathBuf>,
    /// Relation name; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    /// Sensitivity policy (TOML).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Directory written by `ingest`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct LayoutArgs {
    /// Binned attribute.
    #[arg(long)]
    attr: String,
    /// Seed of the sensitive-value permutation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pad bins to a full grid with placeholder values.
    #[arg(long)]
    padding: bool,
    /// Use a saved layout instead of building one.
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct HybridArgs {
    /// Relations as NAME=path.csv.
    #[arg(long = "csv", value_name = "NAME=PATH", required = true)]
    csvs: Vec<String>,
    /// Sensitivity policy (TOML).
    #[arg(long)]
    policy: PathBuf,
    /// Join condition `R.a=S.b`; repeat for multiway joins.
    #[arg(long = "join", value_name = "COND")]
    joins: Vec<String>,
    /// Selection target relation (instead of a join).
    #[arg(long, conflicts_with = "joins")]
    select: Option<String>,
    /// Selection predicate `attr=value`.
    #[arg(long = "where", requires = "select")]
    predicate: Option<String>,
    /// Projected attributes, comma separated.
    #[arg(long, requires = "select", value_delimiter = ',')]
    project: Option<Vec<String>>,
    /// Extra workload join conditions used when materializing co-partitions.
    #[arg(long = "workload-join", value_name = "COND")]
    workload: Vec<String>,
    #[arg(long, value_enum, default_value_t = Mode::Modified)]
    mode: Mode,
}

#[derive(Copy, Clone, ValueEnum)]
enum Mode {
    Modified,
    Naive,
    AllPrivate,
}

impl From<Mode> for SplitMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Modified => SplitMode::Modified,
            Mode::Naive => SplitMode::Naive,
            Mode::AllPrivate => SplitMode::AllPrivate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a CSV relation by a policy and store both partitions.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Report the partition of a relation and base-case violations.
    Partition {
        #[command(flatten)]
        data: DatasetArgs,
        /// Attribute checked for the one-row-per-side restriction.
        #[arg(long)]
        attr: Option<String>,
    },
    /// Build and save a bin layout.
    Bins {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Run selection queries and record the cloud's view.
    Query {
        #[command(flatten)]
        data: DatasetArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        /// Keyword; repeat for several queries.
        #[arg(long = "keyword", required = true)]
        keywords: Vec<String>,
        /// Run without bins.
        #[arg(long)]
        naive: bool,
        /// Projected attributes, comma separated.
        #[arg(long, value_delimiter = ',')]
        project: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        key_seed: u64,
    },
    /// Print the split plan and predicted counters.
    HybridPlan(HybridArgs),
    /// Execute the split plan.
    HybridRun(HybridArgs),
    /// Compute co-partitions for a join workload.
    Copartition {
        #[command(flatten)]
        hybrid: HybridArgs,
        /// Write the private-side copy of each relation with its cpt column.
        #[arg(long)]
        materialize: bool,
        /// Print storage statistics.
        #[arg(long)]
        stats: bool,
    },
    /// Check a trace, or every keyword under both executors.
    Audit {
        #[arg(long, conflicts_with = "exhaustive")]
        trace: Option<PathBuf>,
        #[arg(long)]
        exhaustive: bool,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        attr: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        padding: bool,
        #[arg(long, default_value_t = 1)]
        key_seed: u64,
    },
    /// Evaluate the cost model.
    Cost {
        /// Sweep terms: key=v, key=a,b or key=lo..hi[:n].
        #[arg(long, num_args = 1.., value_name = "TERM")]
        sweep: Vec<String>,
        /// Take bin sizes from a saved layout.
        #[arg(long)]
        from_layout: Option<PathBuf>,
        /// Cost parameters (TOML).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run a bundled example end to end.
    Demo {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(["employee", "rst-join", "sixteen"]))]
        name: String,
    },
    /// Bundle every JSON artifact in the output directory.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Prints `value` and writes it to `out/file`.
fn emit<T: Serialize>(out: &Path, file: &str, value: &T) -> Result<()> {
    let text = to_json(value)?;
    write_artifact(out, file, &text)?;
    print!("{text}");
    Ok(())
}

fn write_artifact(out: &Path, file: &str, text: &str) -> Result<()> {
    let path = out.join(file);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "relation".into())
}

fn load_policy(path: &Path) -> Result<SensitivityPolicy> {
    SensitivityPolicy::from_path(path).map_err(invalid).with_context(|| format!("policy {}", path.display()))
}

fn load_relation(name: &str, path: &Path) -> Result<Relation> {
    Relation::from_csv_path(name, path).map_err(invalid).with_context(|| format!("reading {}", path.display()))
}

fn load_dataset(args: &DatasetArgs) -> Result<PartitionedDataset> {
    if let Some(dir) = &args.dataset {
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).map_err(invalid)?)?;
        let name = manifest["relation"].as_str().ok_or_else(|| invalid(anyhow!("manifest lacks relation name")))?;
        let mut s = load_relation(&format!("{name}_s"), &dir.join("sensitive.csv"))?;
        s.rows.iter_mut().for_each(|r| r.sensitive = true);
        let ns = load_relation(&format!("{name}_ns"), &dir.join("nonsensitive.csv"))?;
        let vertical = if dir.join("vertical.csv").exists() {
            let mut v = load_relation(&format!("{name}_attrs"), &dir.join("vertical.csv"))?;
            v.rows.iter_mut().for_each(|r| r.sensitive = true);
            Some(v)
        } else {
            None
        };
        return PartitionedDataset::from_parts(s, ns, vertical).map_err(invalid);
    }
    let (Some(csv), Some(policy)) = (&args.csv, &args.policy) else {
        return Err(invalid(anyhow!("give --dataset DIR, or --csv FILE with --policy FILE")));
    };
    let name = args.name.clone().unwrap_or_else(|| stem(csv));
    classify_relation(&load_relation(&name, csv)?, &load_policy(policy)?).map_err(invalid)
}

fn build_layout(ds: &PartitionedDataset, args: &LayoutArgs) -> Result<BinLayout> {
    if let Some(path) = &args.layout {
        return BinLayout::from_json(&fs::read_to_string(path).map_err(invalid)?).map_err(invalid);
    }
    let s = ds.sensitive_values(&args.attr).map_err(invalid)?;
    let ns = ds.nonsensitive_values(&args.attr).map_err(invalid)?;
    create_bins(&s, &ns, args.seed, BinOptions { padding: args.padding }).map_err(invalid)
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn load_hybrid(args: &HybridArgs) -> Result<(Materialized, Option<HybridQuery>)> {
    let policy = load_policy(&args.policy)?;
    let mut relations = Vec::new();
    for spec in &args.csvs {
        let (name, path) = spec.split_once('=').ok_or_else(|| invalid(anyhow!("expected NAME=PATH, got `{spec}`")))?;
        relations.push(load_relation(name, Path::new(path))?);
    }
    let ds = HybridDataset::with_policy(relations, &policy).map_err(invalid)?;
    let parse = |c: &Vec<String>| c.iter().map(|s| JoinCondition::parse(s)).collect::<Result<Vec<_>, _>>().map_err(invalid);
    let joins = parse(&args.joins)?;
    let workload = parse(&args.workload)?;
    let query = if let Some(rel) = &args.select {
        let predicate = match &args.predicate {
            Some(p) => {
                let (a, v) = p.split_once('=').ok_or_else(|| invalid(anyhow!("expected attr=value, got `{p}`")))?;
                Some((a.trim().to_string(), Value::parse(v.trim())))
            }
            None => None,
        };
        Some(HybridQuery::Select(SelectQuery { relation: rel.clone(), predicate, projection: args.project.clone() }))
    } else if !joins.is_empty() {
        Some(HybridQuery::Join(JoinQuery::new(joins.clone()).map_err(invalid)?))
    } else {
        None
    };
    let mut queries = vec![joins];
    if !workload.is_empty() {
        queries.push(workload);
    }
    let paths = enumerate_join_paths(&JoinSource::Workload(queries)).map_err(invalid)?;
    Ok((Materialized::build(ds, paths).map_err(invalid)?, query))
}

fn run(cli: &Cli) -> Result<u8> {
    let out = &cli.out;
    match &cli.command {
        Command::Ingest { csv, name, policy } => {
            let name = name.clone().unwrap_or_else(|| stem(csv));
            let ds = classify_relation(&load_relation(&name, csv)?, &load_policy(policy)?).map_err(invalid)?;
            let dir = format!("datasets/{name}");
            write_artifact(out, &format!("{dir}/sensitive.csv"), &ds.sensitive.to_csv_string()?)?;
            write_artifact(out, &format!("{dir}/nonsensitive.csv"), &ds.nonsensitive.to_csv_string()?)?;
            if let Some(v) = &ds.vertical {
                write_artifact(out, &format!("{dir}/vertical.csv"), &v.to_csv_string()?)?;
            }
            let manifest = json!({
                "relation": name,
                "sensitive_rows": ds.sensitive.len(),
                "nonsensitive_rows": ds.nonsensitive.len(),
                "vertical_rows": ds.vertical.as_ref().map(Relation::len),
                "metadata_digest": digest(&serde_json::to_string(&ds.owner_metadata)?),
            });
            emit(out, &format!("{dir}/manifest.json"), &manifest)?;
            Ok(0)
        }
        Command::Partition { data, attr } => {
            let ds = load_dataset(data)?;
            let base_case = attr.as_ref().map(|a| ds.validate_base_case(a)).transpose().map_err(invalid)?;
            let report = json!({
                "sensitive": { "relation": ds.sensitive.name, "rows": ds.sensitive.len(), "ids": ds.sensitive.ids() },
                "nonsensitive": { "relation": ds.nonsensitive.name, "rows": ds.nonsensitive.len(), "ids": ds.nonsensitive.ids() },
                "vertical": ds.vertical.as_ref().map(|v| json!({ "relation": v.name, "schema": v.schema, "rows": v.len() })),
                "base_case": base_case,
            });
            emit(out, "partition.json", &report)?;
            Ok(0)
        }
        Command::Bins { data, layout } => {
            let ds = load_dataset(data)?;
            let l = build_layout(&ds, layout)?;
            write_artifact(out, "layout.json", &l.to_json())?;
            emit(out, "bins.json", &json!({ "seed": layout.seed, "attribute": layout.attr, "x": l.x(), "y": l.y(), "diagnostics": l.diagnostics(), "layout": l.to_document() }))?;
            Ok(0)
        }
        Command::Query { data, layout, keywords, naive, project, key_seed } => {
            let ds = load_dataset(data)?;
            let dep = if *naive {
                Deployment::naive(&ds, &layout.attr, *key_seed).map_err(invalid)?
            } else {
                Deployment::query_binning(&ds, &layout.attr, build_layout(&ds, layout)?, *key_seed).map_err(invalid)?
            };
            let mut outcomes = Vec::new();
            for w in keywords {
                let mut q = SelectionQuery::new(&layout.attr, Value::parse(w));
                if let Some(cols) = project {
                    q = q.project(&cols.iter().map(String::as_str).collect::<Vec<_>>());
                }
                outcomes.push(json!({ "keyword": w, "outcome": dep.execute(&q).map_err(invalid)? }));
            }
            let trace = AuditTrace::capture(&dep);
            write_artifact(out, "trace.json", &to_json(&trace)?)?;
            emit(out, "query.json", &json!({ "seed": layout.seed, "key_seed": key_seed, "protocol": dep.protocol(), "queries": outcomes }))?;
            Ok(0)
        }
        Command::HybridPlan(args) => {
            let (m, q) = load_hybrid(args)?;
            let q = q.ok_or_else(|| invalid(anyhow!("give --join conditions or --select")))?;
            emit(out, "hybrid-plan.json", &split_query(&q, &m, args.mode.into()).map_err(invalid)?)?;
            Ok(0)
        }
        Command::HybridRun(args) => {
            let (m, q) = load_hybrid(args)?;
            let q = q.ok_or_else(|| invalid(anyhow!("give --join conditions or --select")))?;
            let plan = split_query(&q, &m, args.mode.into()).map_err(invalid)?;
            let rep = execute_split_plan(&plan, &m)?;
            emit(out, "hybrid-run.json", &json!({ "predicted": plan.predicted, "execution": rep }))?;
            Ok(0)
        }
        Command::Copartition { hybrid, materialize, stats } => {
            let (m, _) = load_hybrid(hybrid)?;
            if *materialize {
                for name in m.dataset().names() {
                    write_artifact(out, &format!("copartition/{name}.csv"), &m.private_csv(name)?)?;
                }
            }
            let copartitions: Vec<_> = m.copartitions().map(|cp| json!({ "path": cp.path.id(), "members": cp.members })).collect();
            let mut report = json!({ "paths": m.paths().ids().collect::<Vec<_>>(), "copartitions": copartitions });
            if *stats {
                report["stats"] = serde_json::to_value(m.stats())?;
            }
            emit(out, "copartition.json", &report)?;
            Ok(0)
        }
        Command::Audit { trace, exhaustive, data, attr, seed, padding, key_seed } => {
            if let Some(path) = trace {
                let t: AuditTrace = serde_json::from_str(&fs::read_to_string(path).map_err(invalid)?).map_err(invalid)?;
                let verdict = check_partitioned_security(&t);
                emit(out, "audit.json", &verdict)?;
                return Ok(if verdict.secure { 0 } else { EXIT_LEAKS });
            }
            if !exhaustive {
                return Err(invalid(anyhow!("give --trace FILE or --exhaustive")));
            }
            let attr = attr.as_ref().ok_or_else(|| invalid(anyhow!("--exhaustive needs --attr")))?;
            let ds = load_dataset(data)?;
            let largs = LayoutArgs { attr: attr.clone(), seed: *seed, padding: *padding, layout: None };
            let layout = build_layout(&ds, &largs)?;
            let audit = exhaustive_audit(&ds, attr, layout, *key_seed).map_err(invalid)?;
            let leaks = !audit.query_binning.secure;
            emit(out, "audit.json", &json!({ "seed": seed, "key_seed": key_seed, "audit": audit }))?;
            Ok(if leaks { EXIT_LEAKS } else { 0 })
        }
        Command::Cost { sweep, from_layout, params } => {
            if !sweep.is_empty() {
                let spec = SweepSpec::parse(sweep).map_err(invalid)?;
                let csv = curves_csv(&emit_curves(&spec));
                write_artifact(out, "cost.csv", &csv)?;
                print!("{csv}");
                return Ok(0);
            }
            let cfg = match params {
                Some(p) => CostConfig::from_toml_str(&fs::read_to_string(p).map_err(invalid)?).map_err(invalid)?,
                None => CostConfig::default(),
            };
            let p = cfg.resolve().map_err(invalid)?;
            let (sb, nsb) = match from_layout {
                Some(path) => {
                    let l = BinLayout::from_json(&fs::read_to_string(path).map_err(invalid)?).map_err(invalid)?;
                    let (sb, nsb) = layout_bin_sizes(&l);
                    (sb as f64, nsb as f64)
                }
                None => (p.default_bin(), p.default_bin()),
            };
            emit(out, "cost.json", &eta_report(&p, sb, nsb))?;
            Ok(0)
        }
        Command::Demo { name } => {
            let demo: DemoName = name.parse().map_err(|e: String| invalid(anyhow!(e)))?;
            let report = run_demo(demo).map_err(|e| anyhow!(e))?;
            emit(out, &format!("demo-{demo}.json"), &report)?;
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Report => {
            let mut artifacts = serde_json::Map::new();
            let mut names: Vec<PathBuf> = fs::read_dir(out)
                .with_context(|| format!("reading {}", out.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "report.json"))
                .collect();
            names.sort();
            if names.is_empty() {
                bail!("no JSON artifacts in {}", out.display());
            }
            for p in names {
                let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?;
                artifacts.insert(p.file_name().expect("file").to_string_lossy().into_owned(), v);
            }
            emit(out, "report.json", &json!({ "artifacts": artifacts }))?;
            Ok(0)
        }
    }
}
