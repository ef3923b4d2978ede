use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use personachat::corpus::{
    build_examples, generate_synthetic, load_canonical, parse_dialog_file, write_canonical, ConditioningMode,
    CorpusStats, Episode, ParseOptions, Persona, Split, Variant,
};
use personachat::eval::{profile_prediction, run_matrix, EvalError, Evaluable, MatrixModel};
use personachat::generative::{train_generative, write_gen_model};
use personachat::rankers::{kv_build, train_ranker, write_kv_store, write_ranker, DEFAULT_TOP_M};
use personachat::textrep::Vocabulary;
use personachat_service::app::{test_personas, training_utterances, AppState};
use personachat_service::models::reply;
use personachat_service::session::over_length;
use personachat_service::{load_model, side_path, ModelType, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::FileConfig;
use crate::{
    ChatArgs, Command, EvalArgs, Failure, IngestArgs, ProfilePredArgs, ServeArgs, SynthArgs, TrainArgs,
};

type Res<T> = Result<T, Failure>;

fn invalid(msg: impl Display) -> Failure {
    Failure::Invalid(anyhow!("{msg}"))
}

fn runtime(msg: impl Display) -> Failure {
    Failure::Runtime(anyhow!("{msg}"))
}

fn required<T>(v: Option<T>, flag: &str) -> Res<T> {
    v.ok_or_else(|| invalid(format!("--{flag} is required")))
}

fn require_file(path: &Path) -> Res<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{} does not exist", path.display())))
    }
}

fn require_out_dir(path: &Path) -> Res<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(invalid(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Res<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Res<()> {
    w.flush().map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Res<Vec<Episode>> {
    require_file(path)?;
    let f = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    load_canonical(BufReader::new(f)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_corpus(episodes: &[Episode], path: &Path) -> Res<()> {
    let mut w = create(path)?;
    write_canonical(episodes, &mut w).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    finish(w, path)
}

fn variant_stats(episodes: &[Episode]) -> BTreeMap<String, CorpusStats> {
    let mut by_variant: BTreeMap<String, Vec<Episode>> = BTreeMap::new();
    for e in episodes {
        let key = e.variant().map_or("none".to_owned(), |v| v.to_string());
        by_variant.entry(key).or_default().push(e.clone());
    }
    by_variant.into_iter().map(|(k, v)| (k, CorpusStats::compute(&v))).collect()
}

/// Writes to stdout; a closed pipe (`personachat ... | head`) is not an error.
fn emit(text: &str) {
    let _ = io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(value: &serde_json::Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("json values serialize")));
}

pub(crate) fn dispatch(command: Command) -> Res<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::ProfilePred(a) => profile_pred(a),
        Command::Chat(a) => chat(a),
        Command::Serve(a) => serve(a),
    }
}

fn file_config(path: Option<&Path>) -> Res<FileConfig> {
    FileConfig::load(path).map_err(invalid)
}

// ---------------------------------------------------------------------------

const SPLITS: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

fn ingest(a: IngestArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let inputs = if a.input.is_empty() { file.inputs() } else { a.input };
    if inputs.is_empty() {
        return Err(invalid("--in is required"));
    }
    let out = required(a.out.or_else(|| file.out_path()), "out")?;
    require_out_dir(&out)?;
    let split = a.split.or(file.split);
    let variant = a.variant.or(file.variant);

    let mut jobs: Vec<(PathBuf, Split, Variant)> = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let variants = variant.map_or(vec![Variant::Original, Variant::Revised], |v| vec![v]);
            let splits = split.map_or(SPLITS.to_vec(), |s| vec![s]);
            for s in splits {
                for &v in &variants {
                    let found = ["both", "self"]
                        .iter()
                        .map(|side| path.join(format!("{s}_{side}_{v}.txt")))
                        .find(|f| f.is_file());
                    if let Some(f) = found {
                        jobs.push((f, s, v));
                    }
                }
            }
        } else if path.is_file() {
            let name = path.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
            let s = split
                .or_else(|| SPLITS.into_iter().find(|s| name.starts_with(s.as_str())))
                .unwrap_or(Split::Train);
            let v = variant.unwrap_or(if name.contains("revised") { Variant::Revised } else { Variant::Original });
            jobs.push((path, s, v));
        } else {
            return Err(invalid(format!("{} does not exist", path.display())));
        }
    }
    if jobs.is_empty() {
        return Err(invalid("no dialogue files found in the inputs"));
    }

    let mut episodes = Vec::new();
    let mut n_diagnostics = 0;
    let mut seen: HashMap<(Split, Variant), usize> = HashMap::new();
    for (path, s, v) in &jobs {
        let k = seen.entry((*s, *v)).or_default();
        let id_prefix = if *k == 0 { format!("{s}-") } else { format!("{s}{k}-") };
        *k += 1;
        let opts = ParseOptions {
            expect_candidates: !a.no_candidates,
            split: *s,
            variant: *v,
            id_prefix,
        };
        let f = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let parsed = parse_dialog_file(BufReader::new(f), &opts).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        for d in &parsed.diagnostics {
            log::warn!("{}:{}: {}", path.display(), d.line, d.message);
        }
        n_diagnostics += parsed.diagnostics.len();
        eprintln!("{}: {} episodes ({s}, {v})", path.display(), parsed.episodes.len());
        episodes.extend(parsed.episodes);
    }
    write_corpus(&episodes, &out)?;
    print_json(&json!({
        "episodes": episodes.len(),
        "diagnostics": n_diagnostics,
        "variants": variant_stats(&episodes),
    }));
    Ok(())
}

fn synth(a: SynthArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let mut cfg = file.synth.clone().unwrap_or_default();
    if let Some(s) = a.common.seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Some(n) = a.n_personas {
        cfg.n_personas = n;
    }
    if let Some(n) = a.n_episodes {
        cfg.n_episodes = n;
    }
    if let Some(n) = a.n_candidates.or(file.n_candidates) {
        cfg.n_candidates = n;
    }
    let out = required(a.out.or_else(|| file.out_path()), "out")?;
    require_out_dir(&out)?;
    let corpus = generate_synthetic(&cfg).map_err(invalid)?;
    write_corpus(&corpus.episodes, &out)?;
    print_json(&json!({
        "episodes": corpus.episodes.len(),
        "seed": cfg.seed,
        "variants": variant_stats(&corpus.episodes),
    }));
    Ok(())
}

/// Turn texts and persona sentences of the episodes a model of `variant`
/// trains on.
fn training_docs(episodes: &[Episode], variant: Variant) -> Vec<&str> {
    let mut docs = Vec::new();
    for e in episodes.iter().filter(|e| e.variant().is_none_or(|v| v == variant)) {
        docs.extend(e.turns.iter().map(|t| t.text.as_str()));
        for p in [&e.persona_p0, &e.persona_p1].into_iter().flatten() {
            docs.extend(p.sentences.iter().map(String::as_str));
        }
    }
    docs
}

fn write_vocab(vocab: &Vocabulary, path: &Path) -> Res<()> {
    let mut w = create(path)?;
    vocab.write_to(&mut w).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    finish(w, path)
}

fn train(a: TrainArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let input = required(a.input.or_else(|| file.inputs().into_iter().next()), "in")?;
    let out = required(a.out.or_else(|| file.out_path()), "out")?;
    let kind = required(a.model_type.or(file.model_type), "model-type")?;
    let mode = a.mode.or(file.mode).unwrap_or(ConditioningMode::Own);
    let variant = a.variant.or(file.variant).unwrap_or(Variant::Original);
    let split = a.split.or(file.split).unwrap_or(Split::Train);
    let seed = a.common.seed.or(file.seed);
    require_file(&input)?;
    require_out_dir(&out)?;

    let mut ranker_cfg = file.ranker.clone().unwrap_or_default();
    let mut gen_cfg = file.generative.clone().unwrap_or_default();
    if let Some(s) = seed {
        ranker_cfg.seed = s;
        gen_cfg.seed = s;
    }
    if let Some(m) = kind.gen_mode() {
        gen_cfg.mode = m;
        gen_cfg.validate().map_err(invalid)?;
    } else {
        ranker_cfg.validate().map_err(invalid)?;
    }

    let episodes: Vec<Episode> = load_corpus(&input)?.into_iter().filter(|e| e.split == split).collect();
    let examples = build_examples(&episodes, mode, variant, None).map_err(invalid)?;
    if examples.is_empty() {
        return Err(invalid(format!("no labeled {split} turns with {variant} personas in {}", input.display())));
    }
    let vocab = Vocabulary::build(training_docs(&episodes, variant), 1).map_err(invalid)?;
    let mut summary = json!({
        "model_type": kind,
        "mode": mode,
        "variant": variant,
        "split": split,
        "examples": examples.len(),
        "vocab_size": vocab.len(),
        "out": out,
    });

    match kind {
        ModelType::Ir => write_vocab(&vocab, &out)?,
        ModelType::Ranker | ModelType::ProfileMem | ModelType::KvProfileMem => {
            let model = train_ranker(&examples, &vocab, &ranker_cfg, kind != ModelType::Ranker).map_err(runtime)?;
            let mut w = create(&out)?;
            write_ranker(&model, &mut w).map_err(runtime)?;
            finish(w, &out)?;
            write_vocab(&vocab, &side_path(&out, "vocab"))?;
            if kind == ModelType::KvProfileMem {
                let top_m = file.kv_top_m.unwrap_or(DEFAULT_TOP_M);
                let store = kv_build(&examples, &model, Some(top_m)).map_err(runtime)?;
                summary["kv_pairs"] = json!(store.len());
                let kv = side_path(&out, "kv");
                let mut w = create(&kv)?;
                write_kv_store(&store, &mut w).map_err(runtime)?;
                finish(w, &kv)?;
            }
        }
        ModelType::Seq2seq | ModelType::Lm | ModelType::GenProfileMem => {
            let (model, history) = train_generative(&examples, vocab.clone(), &gen_cfg).map_err(runtime)?;
            summary["epoch_nll"] = json!(history.epoch_nll);
            let mut w = create(&out)?;
            write_gen_model(&model, &mut w).map_err(runtime)?;
            finish(w, &out)?;
            write_vocab(&vocab, &side_path(&out, "vocab"))?;
        }
    }
    print_json(&summary);
    Ok(())
}

// ---------------------------------------------------------------------------

/// A model named on the `eval` command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelType,
    /// May contain `{mode}` and `{variant}`.
    pub path: String,
}

impl ModelSpec {
    pub fn cell_path(&self, mode: ConditioningMode, variant: Variant) -> PathBuf {
        PathBuf::from(
            self.path
                .replace("{mode}", mode.as_str())
                .replace("{variant}", variant.as_str()),
        )
    }
}

/// Parses `[NAME=][TYPE:]PATH`; the name defaults to the type.
pub fn parse_model_spec(spec: &str, default_kind: Option<ModelType>) -> Result<ModelSpec, String> {
    let (name, rest) = match spec.split_once('=') {
        Some((n, r)) if !n.is_empty() && !n.contains(['/', ':']) => (Some(n), r),
        _ => (None, spec),
    };
    let (kind, path) = match rest.split_once(':').and_then(|(t, p)| Some((t.parse::<ModelType>().ok()?, p))) {
        Some(typed) => typed,
        None => (
            default_kind.ok_or_else(|| format!("model {spec:?} names no type; use TYPE:PATH or --model-type"))?,
            rest,
        ),
    };
    if path.is_empty() {
        return Err(format!("model {spec:?} has an empty path"));
    }
    Ok(ModelSpec {
        name: name.map_or_else(|| kind.to_string(), str::to_owned),
        kind,
        path: path.to_owned(),
    })
}

fn eval(a: EvalArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let input = required(a.input.or_else(|| file.inputs().into_iter().next()), "in")?;
    let default_kind = a.model_type.or(file.model_type);
    let specs: Vec<ModelSpec> = if a.model.is_empty() {
        file.models()
            .iter()
            .map(|s| {
                parse_model_spec(s, default_kind).map(|mut m| {
                    m.path = file.resolve(PathBuf::from(&m.path)).to_string_lossy().into_owned();
                    m
                })
            })
            .collect::<Result<_, _>>()
    } else {
        a.model.iter().map(|s| parse_model_spec(s, default_kind)).collect()
    }
    .map_err(invalid)?;
    if specs.is_empty() {
        return Err(invalid("--model is required"));
    }
    let mut names = HashSet::new();
    if let Some(dup) = specs.iter().find(|s| !names.insert(&s.name)) {
        return Err(invalid(format!("model name {:?} is used twice", dup.name)));
    }
    let out = a.out.or_else(|| file.out_path());
    if let Some(o) = &out {
        require_out_dir(o)?;
    }

    let mut cfg = file.eval.clone().unwrap_or_default();
    if let Some(m) = a.mode.or(file.mode) {
        cfg.modes = vec![m];
    }
    let variant_flag = a.variant.or(file.variant);
    if let Some(v) = variant_flag {
        cfg.variants = vec![v];
    }
    if let Some(n) = a.n_candidates.or(file.n_candidates) {
        if n < 2 {
            return Err(invalid("--n-candidates must be at least 2"));
        }
        cfg.n_distractors = n - 1;
    }
    if let Some(s) = a.common.seed.or(file.seed) {
        cfg.seed = s;
    }
    let split = a.split.or(file.split).unwrap_or(Split::Test);

    let episodes: Vec<Episode> = load_corpus(&input)?.into_iter().filter(|e| e.split == split).collect();
    if episodes.is_empty() {
        return Err(invalid(format!("{} has no {split} episodes", input.display())));
    }
    let present: BTreeSet<Variant> = episodes.iter().filter_map(Episode::variant).collect();
    if variant_flag.is_none() {
        for v in cfg.variants.iter().filter(|v| !present.contains(v)) {
            log::warn!("the {split} split has no {v} personas; skipping that variant");
        }
        cfg.variants.retain(|v| present.contains(v));
    }

    let mut loaded: HashMap<(PathBuf, ModelType), Evaluable> = HashMap::new();
    let mut models = Vec::new();
    for spec in &specs {
        let mut m = MatrixModel::new(&spec.name);
        for &mode in &cfg.modes {
            for &variant in &cfg.variants {
                let path = spec.cell_path(mode, variant);
                if !path.is_file() {
                    log::warn!(
                        "{}: {} not found; the {mode}/{variant} cell stays empty",
                        spec.name,
                        path.display()
                    );
                    continue;
                }
                let key = (path.clone(), spec.kind);
                let model = match loaded.get(&key) {
                    Some(m) => m.clone(),
                    None => {
                        let m = load_model(&path, spec.kind).map_err(invalid)?;
                        loaded.insert(key, m.clone());
                        m
                    }
                };
                m = m.with(mode, variant, model);
            }
        }
        models.push(m);
    }
    let report = run_matrix(&episodes, &models, &cfg).map_err(|e| match e {
        EvalError::Config(_) | EvalError::Corpus(_) => invalid(e),
        _ => runtime(e),
    })?;
    emit(&report.to_table());
    if let Some(o) = out {
        let mut w = create(&o)?;
        w.write_all(report.to_jsonl().as_bytes())
            .map_err(|e| runtime(format!("{}: {e}", o.display())))?;
        finish(w, &o)?;
    }
    Ok(())
}

fn profile_pred(a: ProfilePredArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let input = required(a.input.or_else(|| file.inputs().into_iter().next()), "in")?;
    let mut cfg = file.profile_pred.clone().unwrap_or_default();
    if let Some(l) = a.level {
        cfg.level = l;
    }
    if let Some(s) = a.speaker {
        cfg.speaker = s;
    }
    if let Some(t) = a.target {
        cfg.target = t;
    }
    if let Some(s) = a.common.seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Some(n) = a.n_candidates.or(file.n_candidates) {
        if n < 2 {
            return Err(invalid("--n-candidates must be at least 2"));
        }
        cfg.n_negatives = n - 1;
    }
    let variant = a.variant.or(file.variant).unwrap_or(Variant::Original);
    let split = a.split.or(file.split).unwrap_or(Split::Test);
    let out = a.out.or_else(|| file.out_path());
    if let Some(o) = &out {
        require_out_dir(o)?;
    }

    let episodes = load_corpus(&input)?;
    let mut seen = HashSet::new();
    let pool: Vec<Persona> = episodes
        .iter()
        .flat_map(|e| [&e.persona_p0, &e.persona_p1])
        .flatten()
        .filter(|p| p.variant == variant && seen.insert(p.id.clone()))
        .cloned()
        .collect();
    let dialogues: Vec<Episode> = episodes
        .into_iter()
        .filter(|e| e.split == split && e.variant() == Some(variant))
        .collect();
    let result = profile_prediction(&dialogues, &pool, &cfg).map_err(|e| match e {
        EvalError::EmptyExamples | EvalError::InsufficientPool { .. } | EvalError::Config(_) => invalid(e),
        _ => runtime(e),
    })?;
    let report = json!({ "config": cfg, "variant": variant, "split": split, "result": result });
    print_json(&report);
    if let Some(o) = out {
        let mut w = create(&o)?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(runtime)?;
        finish(w, &o)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

/// Terminal chat: each input line is a human turn answered by the model.
/// `/persona` shows the model's persona, `/reset` starts over and `/quit`
/// ends. Returns the number of exchanges.
pub fn chat_loop(
    model: &Evaluable,
    profile: &[String],
    pool: &[String],
    input: impl BufRead,
    mut output: impl Write,
) -> io::Result<usize> {
    let mut context: Vec<String> = Vec::new();
    let mut exchanges = 0;
    write!(output, "you> ")?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        let text = line.trim();
        match text {
            "" => {}
            "/quit" | "/exit" => break,
            "/reset" => {
                context.clear();
                writeln!(output, "(new dialogue)")?;
            }
            "/persona" => {
                for s in profile {
                    writeln!(output, "  {s}")?;
                }
            }
            _ => {
                context.push(text.to_owned());
                let r = reply(model, &context, profile, pool).unwrap_or_default();
                let flag = if over_length(&r) { "  [over 15 words]" } else { "" };
                writeln!(output, "model> {r}{flag}")?;
                context.push(r);
                exchanges += 1;
            }
        }
        write!(output, "you> ")?;
        output.flush()?;
    }
    writeln!(output)?;
    Ok(exchanges)
}

fn chat(a: ChatArgs) -> Res<()> {
    let file = file_config(a.common.config.as_deref())?;
    let path = required(
        a.model.or_else(|| file.models().first().map(|m| file.resolve(PathBuf::from(m)))),
        "model",
    )?;
    let kind = required(a.model_type.or(file.model_type), "model-type")?;
    let mode = a.mode.or(file.mode).unwrap_or(ConditioningMode::Own);
    if !matches!(mode, ConditioningMode::None | ConditioningMode::Own) {
        return Err(invalid("chat supports --mode none or self"));
    }
    let variant = a.variant.or(file.variant).unwrap_or(Variant::Original);
    require_file(&path)?;
    let corpus = a.input.or_else(|| file.inputs().into_iter().next());
    let model = load_model(&path, kind).map_err(invalid)?;

    let (personas, pool) = match &corpus {
        Some(c) => {
            let eps = load_corpus(c)?;
            (test_personas(&eps, variant), training_utterances(&eps))
        }
        None => (Vec::new(), Vec::new()),
    };
    if matches!(model, Evaluable::Ranker(_)) && pool.is_empty() {
        return Err(invalid("ranking models need --in: the corpus supplies their reply pool"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed.or(file.seed).unwrap_or(0));
    let profile = match (mode, personas.is_empty()) {
        (ConditioningMode::None, _) => Vec::new(),
        (_, true) => {
            log::warn!("no test personas available; chatting without one");
            Vec::new()
        }
        (_, false) => personas[rng.random_range(0..personas.len())].sentences.clone(),
    };
    eprintln!("chatting with {} ({kind}); /persona reveals its persona, /quit ends", path.display());
    let stdin = io::stdin();
    chat_loop(&model, &profile, &pool, stdin.lock(), io::stdout().lock()).map_err(runtime)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Res<()> {
    let path = required(a.config, "config")?;
    let file = file_config(Some(&path))?;
    let section = file
        .service
        .clone()
        .ok_or_else(|| invalid(format!("{} has no `service` section", path.display())))?;
    let cfg = ServiceConfig::from_json(&section.to_string(), &file.base)
        .map_err(|e| invalid(format!("{}: service: {e}", path.display())))?;
    let state = AppState::from_config(&cfg).map_err(invalid)?;
    let port = a.port.or(file.port).unwrap_or(8080);
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), port))
            .await
            .map_err(|e| runtime(format!("cannot listen on {}:{port}: {e}", a.host)))?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{addr}");
        io::stdout().flush().map_err(runtime)?;
        personachat_service::serve(listener, Arc::new(state), async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
        .map_err(runtime)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        let s = parse_model_spec("pm=profile-mem:models/pm-{mode}.bin", None).unwrap();
        assert_eq!((s.name.as_str(), s.kind), ("pm", ModelType::ProfileMem));
        assert_eq!(s.cell_path(ConditioningMode::Own, Variant::Revised), PathBuf::from("models/pm-self.bin"));
        let s = parse_model_spec("seq2seq:a.bin", None).unwrap();
        assert_eq!((s.name.as_str(), s.path.as_str()), ("seq2seq", "a.bin"));
        let s = parse_model_spec("dir/a=b.bin", Some(ModelType::Ir)).unwrap();
        assert_eq!((s.name.as_str(), s.path.as_str()), ("ir", "dir/a=b.bin"));
        assert!(parse_model_spec("a.bin", None).is_err());
        assert!(parse_model_spec("ir:", None).is_err());
    }

    #[test]
    fn chat_loop_answers_each_line() {
        use personachat::rankers::IrRanker;
        use personachat::textrep::Dictionary;
        let vocab = Vocabulary::build(["i like cats", "i hike a lot"], 1).unwrap();
        let ir = Evaluable::Ranker(Arc::new(IrRanker::new(Dictionary::from_vocab(vocab))));
        let pool = vec!["i like cats .".to_owned(), "i hike a lot .".to_owned()];
        let mut out = Vec::new();
        let n = chat_loop(&ir, &[], &pool, &b"do you hike ?\n\n/persona\n/reset\ncats ?\n/quit\nignored\n"[..], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(n, 2);
        assert!(text.contains("model> i hike a lot ."));
        assert!(text.contains("model> i like cats ."));
        assert!(text.contains("(new dialogue)"));
        assert!(!text.contains("ignored"));
    }
}
