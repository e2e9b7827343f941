use std::fs;
use std::path::{Path, PathBuf};

use binhash::dataset::{generate_world, FeatureStore, ModelWorld, Split};
use binhash::model::HashHead;
use binhash::optimizer::{
    code_length_sweep, codes_test_map, codes_validation_map, encode, train, write_sweep_csv,
};
use binhash::retrieval::{export_results, search, CodeDatabase};

use crate::config::{Config, SEED_ENV};
use crate::{
    CliError, Command, Common, EncodeArgs, EvalArgs, GenDataArgs, Protocol, ReportArgs, SearchArgs,
    TrainArgs, TrainFlags, WorldFlags,
};

pub const WORLD_FILE: &str = "world.json";
pub const FEATURE_FILE: &str = "features.feat";
pub const MODEL_FILE: &str = "model.hash";
pub const TRAIN_CSV: &str = "train_report.csv";
pub const TRAIN_JSON: &str = "train_summary.json";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const CODE_FILE: &str = "codes.bcdb";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.csv";

type Flags = Vec<(&'static str, String)>;

fn push<T: ToString>(flags: &mut Flags, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        flags.push((key, v.to_string()));
    }
}

fn common_flags(c: &Common, flags: &mut Flags) {
    push(flags, "seed", &c.seed);
    push(flags, "tau", &c.tau);
}

fn world_flags(w: &WorldFlags, flags: &mut Flags) {
    push(flags, "num_models", &w.num_models);
    push(flags, "images_per_model", &w.images_per_model);
    push(flags, "points_per_model", &w.points_per_model);
    push(flags, "obs_fraction", &w.obs_fraction);
    push(flags, "feature_dim", &w.feature_dim);
    push(flags, "cluster_spread", &w.cluster_spread);
    push(flags, "noise_sigma", &w.noise_sigma);
}

fn train_flags(t: &TrainFlags, flags: &mut Flags) {
    push(flags, "code_len", &t.code_len);
    push(flags, "k", &t.k);
    push(flags, "m", &t.m);
    push(flags, "margin", &t.margin);
    push(flags, "alpha", &t.alpha);
    push(flags, "outer_iters", &t.outer_iters);
    push(flags, "inner_iters", &t.inner_iters);
    push(flags, "epochs", &t.epochs);
    push(flags, "learning_rate", &t.learning_rate);
    push(flags, "momentum", &t.momentum);
    push(flags, "queries_per_batch", &t.queries_per_batch);
}

fn resolve(common: &Common, flags: Flags) -> Result<Config, CliError> {
    let env = std::env::var(SEED_ENV).ok();
    Config::resolve(common.config.as_deref(), env.as_deref(), &flags)
}

fn set_threads(n: u64) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n as usize)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))
}

fn out_dir(path: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create `{}`: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn load_world(dir: &Path) -> Result<ModelWorld, CliError> {
    Ok(ModelWorld::load(dir.join(WORLD_FILE))?)
}

fn load_features(path: &Path) -> Result<FeatureStore, CliError> {
    let csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    Ok(if csv {
        FeatureStore::import_csv(path)?
    } else {
        FeatureStore::load(path)?
    })
}

fn load_data(dir: &Path) -> Result<(ModelWorld, FeatureStore), CliError> {
    let world = load_world(dir)?;
    let store = load_features(&dir.join(FEATURE_FILE))?.aligned_to(&world)?;
    Ok((world, store))
}

/// Code rows named after the world's images.
fn load_codes(path: &Path, world: &ModelWorld) -> Result<CodeDatabase, CliError> {
    let codes = CodeDatabase::load(path)?;
    if codes.len() != world.num_images() {
        return Err(CliError::Data(format!(
            "`{}` holds {} codes but the world has {} images",
            path.display(),
            codes.len(),
            world.num_images()
        )));
    }
    Ok(codes.with_ids(world.image_ids())?)
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    world_flags(&a.world, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;
    cfg.world.validate()?;

    let (world, store) = generate_world(&cfg.world)?;
    let out = out_dir(&a.out)?;
    world.save(out.join(WORLD_FILE))?;
    store.save(out.join(FEATURE_FILE))?;
    cfg.write_echo(&out)?;
    println!(
        "{} images of {} models written to {}",
        world.num_images(),
        world.models().len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    train_flags(&a.train, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;
    cfg.train.validate()?;

    let (world, store) = load_data(&a.data)?;
    let outcome = train(&world, &store, &cfg.train)?;
    let out = out_dir(&a.out)?;
    outcome.head.save(out.join(MODEL_FILE))?;
    outcome
        .report
        .save(out.join(TRAIN_CSV), out.join(TRAIN_JSON))?;
    let mut pairs = Vec::new();
    outcome.pairs.dump_jsonl(&world, &mut pairs)?;
    fs::write(out.join(PAIRS_FILE), pairs).map_err(binhash::Error::from)?;
    cfg.write_echo(&out)?;

    let r = &outcome.report;
    let (k, t) = r.best_checkpoint;
    eprintln!(
        "best checkpoint k={k} t={t}: validation mAP {:.6} (initial {:.6}), {:.2}s",
        r.best_val_map,
        r.init_val_map,
        r.elapsed.as_secs_f64()
    );
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;

    let head = HashHead::load(&a.model)?;
    let store = load_features(&a.features)?;
    let codes = encode(&head, &store)?;
    let out = out_dir(&a.out)?;
    codes.save(out.join(CODE_FILE))?;
    cfg.write_echo(&out)?;
    println!(
        "{} codes of {} bits written to {}",
        codes.len(),
        codes.code_len(),
        out.display()
    );
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;

    let world = load_world(&a.data)?;
    let codes = load_codes(&a.codes, &world)?;
    let queries: Vec<usize> = if a.queries.is_empty() {
        world.with_split(Split::ValidationQuery)
    } else {
        a.queries
            .iter()
            .map(|q| world.index_of(q))
            .collect::<binhash::Result<_>>()?
    };
    let mut lists = Vec::with_capacity(queries.len());
    for q in queries {
        let id = world.image_id(q);
        let mut list = search(&codes, id, codes.row(q), Some(id))?;
        if list.missing_removal {
            eprintln!("warning: query `{id}` is not in the database; nothing removed");
        }
        if let Some(top) = a.top {
            list.entries.truncate(top);
        }
        lists.push(list);
    }
    let out = out_dir(&a.out)?;
    export_results(out.join(RESULTS_FILE), &lists)?;
    cfg.write_echo(&out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;

    let world = load_world(&a.data)?;
    let codes = load_codes(&a.codes, &world)?;
    let tau = cfg.train.mining.tau;
    let map = match a.protocol {
        Protocol::Test => codes_test_map(&world, &codes, tau)?,
        Protocol::Validation => codes_validation_map(&world, &codes, tau)?,
    };
    println!("mAP {map:.6}");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let mut flags = Flags::new();
    common_flags(&a.common, &mut flags);
    train_flags(&a.train, &mut flags);
    let cfg = resolve(&a.common, flags)?;
    set_threads(a.common.threads)?;
    cfg.train.validate()?;
    if a.lengths.is_empty() || a.lengths.contains(&0) {
        return Err(CliError::Config("code lengths must be >= 1".into()));
    }

    let (world, store) = load_data(&a.data)?;
    let rows = code_length_sweep(&world, &store, &cfg.train, &a.lengths)?;
    for r in rows.iter().filter(|r| r.map.is_none()) {
        eprintln!(
            "warning: L={} exceeds what {} training images of dimension {} can initialize; row left empty",
            r.code_len,
            world.training_images().len(),
            store.dim()
        );
    }
    let out = out_dir(&a.out)?;
    write_sweep_csv(out.join(REPORT_FILE), &rows)?;
    cfg.write_echo(&out)?;
    Ok(())
}
