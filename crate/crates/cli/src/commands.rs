use std::fs;
use std::path::{Path, PathBuf};

use dcbm::cbm::{self, CbmModel};
use dcbm::concept_bank::{self, ConceptBank};
use dcbm::metrics;
use dcbm::pipeline::{self, Projection};
use dcbm::preprocess::{self, PcaModel};
use dcbm::synth;
use dcbm::tensor_io::{self, EmbeddingMatrix, LabelTable};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{table, write_json, Report, Run};
use crate::CliError;

pub struct Ctx {
    pub cfg: RunConfig,
    pub json: bool,
}

impl Ctx {
    fn out_dir(&self) -> &Path {
        &self.cfg.paths.output_dir
    }

    fn emit(&self, run: Run, report: Report) -> Result<(), CliError> {
        run.finish(self.out_dir(), &self.cfg, &report)?;
        if self.json {
            println!("{}", serde_json::to_string_pretty(&report.json).expect("reports are plain JSON"));
        } else {
            println!("{}", report.table);
        }
        Ok(())
    }
}

fn warn(msg: &str) {
    eprintln!("dcbm: warning: {msg}");
}

fn read(run: &mut Run, path: &Path) -> Result<EmbeddingMatrix, CliError> {
    run.input(path);
    Ok(tensor_io::read_embeddings(path)?)
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Serialize, Deserialize)]
struct ProjectionFile {
    normalize: bool,
    pca_prefix: Option<PathBuf>,
}

fn save_projection(ctx: &Ctx, run: &mut Run, projection: &Projection) -> Result<(), CliError> {
    let paths = &ctx.cfg.paths;
    let pca_prefix = match &projection.pca {
        Some(model) => {
            let prefix = paths.pca_prefix();
            model.save(&prefix)?;
            let (components, mean) = preprocess::pca_paths(&prefix);
            run.output(components);
            run.output(mean);
            Some(prefix)
        }
        None => None,
    };
    let file = ProjectionFile {
        normalize: projection.normalize,
        pca_prefix,
    };
    write_json(&paths.projection(), &file)?;
    run.output(paths.projection());
    Ok(())
}

/// Missing projection file means raw embeddings.
fn load_projection(ctx: &Ctx, run: &mut Run) -> Result<Projection, CliError> {
    let path = ctx.cfg.paths.projection();
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Projection::default()),
        Err(e) => return Err(CliError::io(&path, e)),
    };
    run.input(&path);
    let file: ProjectionFile =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let pca = match file.pca_prefix {
        Some(prefix) => {
            let (components, mean) = preprocess::pca_paths(&prefix);
            run.input(components);
            run.input(mean);
            Some(PcaModel::load(&prefix)?)
        }
        None => None,
    };
    Ok(Projection {
        normalize: file.normalize,
        pca,
    })
}

fn load_bank(ctx: &Ctx, run: &mut Run) -> Result<ConceptBank, CliError> {
    let path = ctx.cfg.paths.bank();
    run.input(&path);
    Ok(ConceptBank::load(&path)?)
}

fn bank_ids(bank: &ConceptBank) -> Vec<String> {
    (0..bank.k()).map(|j| bank.concept_id(j).to_string()).collect()
}

/// The model plus a check that it was trained on this bank.
fn load_model(ctx: &Ctx, run: &mut Run, bank: &ConceptBank) -> Result<CbmModel, CliError> {
    let path = ctx.cfg.paths.model();
    run.input(&path);
    let (model, ids) = CbmModel::load(&path)?;
    if ids != bank_ids(bank) {
        return Err(CliError::Input(format!(
            "model {} was trained on a different concept bank than {}",
            path.display(),
            ctx.cfg.paths.bank().display()
        )));
    }
    Ok(model)
}

/// Class names from the labels file, else from the embedding sidecar.
fn class_names(ctx: &Ctx, run: &mut Run, matrix: &EmbeddingMatrix) -> Result<Option<LabelTable>, CliError> {
    let path = ctx.cfg.paths.labels();
    if path.exists() {
        run.input(&path);
        return Ok(Some(tensor_io::read_labels(&path)?));
    }
    Ok(matrix.meta.labels.clone())
}

fn class_name(names: &Option<LabelTable>, c: usize) -> String {
    names
        .as_ref()
        .and_then(|t| t.name(c))
        .map_or_else(|| c.to_string(), str::to_string)
}

/// The concept's name, or its id when the bank is unnamed.
fn concept_label(bank: &ConceptBank, j: usize) -> String {
    bank.names()
        .map_or_else(|| bank.concept_id(j).to_string(), |names| names[j].name.clone())
}

pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let mut run = Run::start("synth");
    let spec = ctx.cfg.synth.spec();
    run.seed("synth", spec.seed);
    let data = synth::generate(&spec)?;
    let dir = ctx.out_dir();
    data.write(dir)?;
    for name in ["proposals.emb", "train.emb", "test.emb", "centers.emb", "labels.json"] {
        run.output(dir.join(name));
    }
    let json = json!({
        "classes": spec.n_classes,
        "train_images": data.train.rows(),
        "test_images": data.test.rows(),
        "proposals": data.proposals.rows(),
        "centers": data.centers.rows(),
        "dim": spec.dim,
        "seed": spec.seed,
    });
    let report = Report::pairs(
        json,
        &[
            ("classes", spec.n_classes.to_string()),
            ("train_images", data.train.rows().to_string()),
            ("test_images", data.test.rows().to_string()),
            ("proposals", data.proposals.rows().to_string()),
            ("centers", data.centers.rows().to_string()),
            ("dim", spec.dim.to_string()),
            ("seed", spec.seed.to_string()),
        ],
    );
    ctx.emit(run, report)
}

pub fn cluster(ctx: &Ctx) -> Result<(), CliError> {
    let mut run = Run::start("cluster");
    let pc = ctx.cfg.pipeline()?;
    run.seed("clustering", pc.bank.clustering.seed);
    if let Some(s) = pc.subset {
        run.seed("subset", s.seed);
    }
    let proposals = read(&mut run, &ctx.cfg.paths.proposals())?;
    let (bank, projection) = pipeline::fit_bank(&proposals, &pc)?;
    create_out(ctx.out_dir())?;
    let bank_path = ctx.cfg.paths.bank();
    bank.save(&bank_path)?;
    run.output(&bank_path);
    save_projection(ctx, &mut run, &projection)?;

    let mut sizes = vec![0usize; bank.k()];
    for a in bank.assignments().iter().flatten() {
        sizes[*a] += 1;
    }
    sizes.sort_unstable();
    let used = bank.assignments().len();
    let json = json!({
        "k": bank.k(),
        "method": bank.method(),
        "centroid_mode": bank.centroid_mode(),
        "proposals_total": proposals.rows(),
        "proposals_used": used,
        "dim": bank.dim(),
        "cluster_size_min": sizes[0],
        "cluster_size_median": sizes[sizes.len() / 2],
        "cluster_size_max": sizes[sizes.len() - 1],
    });
    let report = Report::pairs(
        json,
        &[
            ("k", bank.k().to_string()),
            ("method", bank.method().to_string()),
            ("centroid_mode", bank.centroid_mode().to_string()),
            ("proposals_used", format!("{used} of {}", proposals.rows())),
            ("dim", bank.dim().to_string()),
            ("cluster_size", format!("{} / {} / {}", sizes[0], sizes[sizes.len() / 2], sizes[sizes.len() - 1])),
        ],
    );
    ctx.emit(run, report)
}

pub fn pca(ctx: &Ctx, fit: Option<PathBuf>, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut run = Run::start("pca");
    let n = ctx
        .cfg
        .preprocess
        .pca_components
        .ok_or_else(|| CliError::Usage("pca needs preprocess.pca_components".into()))?;
    let fit_path = fit.unwrap_or_else(|| ctx.cfg.paths.proposals());
    let base = Projection {
        normalize: ctx.cfg.preprocess.normalize,
        pca: None,
    };
    let fit_matrix = base.apply(&read(&mut run, &fit_path)?)?;
    let model = preprocess::pca_fit(&fit_matrix, n)?;
    create_out(ctx.out_dir())?;
    let prefix = ctx.cfg.paths.in_output("pca");
    model.save(&prefix)?;
    let (components, mean) = preprocess::pca_paths(&prefix);
    run.output(components);
    run.output(mean);
    let projection = Projection {
        pca: Some(model),
        ..base
    };

    let mut written = Vec::new();
    for input in inputs {
        let reduced = projection.apply(&read(&mut run, input)?)?;
        let stem = input
            .file_stem()
            .ok_or_else(|| CliError::Usage(format!("{} has no file name", input.display())))?;
        let out = ctx.out_dir().join(format!("{}.pca.emb", stem.to_string_lossy()));
        tensor_io::write_embeddings(&reduced, &out)?;
        run.output(&out);
        written.push(out);
    }

    let model = projection.pca.as_ref().expect("just fitted");
    let total: f64 = fit_variance(&fit_matrix);
    let mut cumulative = 0.0;
    let rows: Vec<Vec<String>> = model
        .explained_variance
        .iter()
        .enumerate()
        .map(|(i, v)| {
            cumulative += v;
            vec![i.to_string(), format!("{v:.6}"), format!("{:.4}", cumulative / total)]
        })
        .collect();
    let json = json!({
        "components": n,
        "explained_variance": model.explained_variance,
        "total_variance": total,
        "outputs": written,
    });
    ctx.emit(run, Report::new(json, table(&["component", "variance", "cumulative"], rows)))
}

/// Trace of the sample covariance.
fn fit_variance(m: &EmbeddingMatrix) -> f64 {
    let (n, d) = (m.rows(), m.dim());
    let mut mean = vec![0.0f64; d];
    for r in m.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(a, &x)| *a += f64::from(x));
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let ss: f64 = m
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(&x, a)| (f64::from(x) - a).powi(2)).sum::<f64>())
        .sum();
    ss / (n as f64 - 1.0)
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let mut run = Run::start("train");
    let tc = ctx.cfg.training.train_config();
    run.seed("training", tc.seed);
    let bank = load_bank(ctx, &mut run)?;
    let projection = load_projection(ctx, &mut run)?;
    let train = read(&mut run, &ctx.cfg.paths.train())?;
    let labels = pipeline::class_labels(&train)?;
    let acts = pipeline::bank_activations(&train, &bank, &projection)?;
    let model = cbm::train(&acts, labels, &tc)?;
    let model_path = ctx.cfg.paths.model();
    create_out(ctx.out_dir())?;
    model.save(&model_path, Some(&bank_ids(&bank)))?;
    run.output(&model_path);

    let last = model.training_log.last().expect("epochs >= 1");
    let zero = model.near_zero_fraction(ctx.cfg.eval.zero_threshold);
    let json = json!({
        "concepts": model.k,
        "classes": model.classes,
        "epochs": model.training_log.len(),
        "final_loss": last.loss,
        "final_train_accuracy": last.train_accuracy,
        "near_zero_fraction": zero,
        "lambda": model.lambda,
    });
    let report = Report::pairs(
        json,
        &[
            ("concepts", model.k.to_string()),
            ("classes", model.classes.to_string()),
            ("epochs", model.training_log.len().to_string()),
            ("final_loss", format!("{:.6}", last.loss)),
            ("final_train_accuracy", format!("{:.4}", last.train_accuracy)),
            ("near_zero_fraction", format!("{zero:.4}")),
        ],
    );
    ctx.emit(run, report)
}

pub fn predict(ctx: &Ctx, input: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::start("predict");
    let bank = load_bank(ctx, &mut run)?;
    let projection = load_projection(ctx, &mut run)?;
    let model = load_model(ctx, &mut run, &bank)?;
    let images = read(&mut run, &input.unwrap_or_else(|| ctx.cfg.paths.test()))?;
    let names = class_names(ctx, &mut run, &images)?;
    let acts = pipeline::bank_activations(&images, &bank, &projection)?;
    let pred = cbm::predict(&model, &acts)?;

    let rows: Vec<serde_json::Value> = pred
        .labels
        .iter()
        .zip(images.row_ids())
        .map(|(&l, id)| json!({"row_id": id, "label": l, "class_name": class_name(&names, l)}))
        .collect();
    let accuracy = images
        .meta
        .class_labels
        .as_deref()
        .map(|truth| metrics::top1_accuracy(&pred.labels, truth))
        .transpose()?;
    let out = ctx.cfg.paths.in_output("predictions.json");
    create_out(ctx.out_dir())?;
    write_json(&out, &rows)?;
    run.output(&out);

    let mut lines: Vec<Vec<String>> = pred
        .labels
        .iter()
        .zip(images.row_ids())
        .map(|(&l, id)| vec![id.clone(), l.to_string(), class_name(&names, l)])
        .collect();
    if let Some(a) = accuracy {
        lines.push(vec!["accuracy".into(), format!("{a:.4}"), String::new()]);
    }
    let json = json!({"predictions": rows, "accuracy": accuracy});
    ctx.emit(run, Report::new(json, table(&["row_id", "label", "class"], lines)))
}

pub fn explain(
    ctx: &Ctx,
    input: Option<PathBuf>,
    row: &str,
    class: Option<usize>,
    top: Option<usize>,
) -> Result<(), CliError> {
    let mut run = Run::start("explain");
    let bank = load_bank(ctx, &mut run)?;
    let projection = load_projection(ctx, &mut run)?;
    let model = load_model(ctx, &mut run, &bank)?;
    let images = read(&mut run, &input.unwrap_or_else(|| ctx.cfg.paths.test()))?;
    let names = class_names(ctx, &mut run, &images)?;
    let i = match images.row_ids().iter().position(|id| id == row) {
        Some(i) => i,
        None => row
            .parse::<usize>()
            .ok()
            .filter(|&i| i < images.rows())
            .ok_or_else(|| CliError::Usage(format!("no row {row:?} in {} rows", images.rows())))?,
    };
    let picked = images.select_rows(&[i])?;
    let acts = pipeline::bank_activations(&picked, &bank, &projection)?;
    let pred = cbm::predict(&model, &acts)?;
    let class = class.unwrap_or(pred.labels[0]);
    let top_n = top.unwrap_or(ctx.cfg.eval.top_n);
    let contributions = cbm::explain(&model, acts.row(0), class, top_n)?;

    let entries: Vec<serde_json::Value> = contributions
        .iter()
        .map(|c| {
            json!({
                "concept": c.concept,
                "concept_id": bank.concept_id(c.concept),
                "name": bank.names().map(|n| n[c.concept].name.clone()),
                "activation": acts.row(0)[c.concept],
                "weight": model.weight(c.concept, class),
                "contribution": c.value,
            })
        })
        .collect();
    let lines = contributions.iter().map(|c| {
        vec![
            concept_label(&bank, c.concept),
            format!("{:.4}", acts.row(0)[c.concept]),
            format!("{:.4}", model.weight(c.concept, class)),
            format!("{:.4}", c.value),
        ]
    });
    let heading = format!(
        "row {} -> class {} ({}), predicted {}",
        images.row_ids()[i],
        class,
        class_name(&names, class),
        class_name(&names, pred.labels[0])
    );
    let json = json!({
        "row_id": images.row_ids()[i],
        "class": class,
        "predicted": pred.labels[0],
        "logit": pred.logits_of(0)[class],
        "contributions": entries,
    });
    let body = table(&["concept", "activation", "weight", "contribution"], lines);
    ctx.emit(run, Report::new(json, format!("{heading}\n{body}")))
}

pub fn name(ctx: &Ctx, out: Option<PathBuf>) -> Result<(), CliError> {
    let mut run = Run::start("name");
    let bank = load_bank(ctx, &mut run)?;
    let projection = load_projection(ctx, &mut run)?;
    let vocab_path = ctx
        .cfg
        .paths
        .vocab
        .clone()
        .ok_or_else(|| CliError::Usage("name needs paths.vocab (vocabulary embeddings)".into()))?;
    let vocab = read(&mut run, &vocab_path)?;
    let words = match &ctx.cfg.paths.vocab_labels {
        Some(p) => {
            run.input(p);
            tensor_io::read_labels(p)?
        }
        None => match &vocab.meta.labels {
            Some(t) => t.clone(),
            None => LabelTable::new(vocab.row_ids().to_vec())?,
        },
    };
    let named = concept_bank::name_concepts(&bank, &projection.apply(&vocab)?, &words)?;
    let out = out.unwrap_or_else(|| ctx.cfg.paths.bank());
    named.save(&out)?;
    run.output(&out);

    let names = named.names().expect("just named");
    let json = json!({ "names": (0..named.k()).map(|j| json!({
        "concept_id": named.concept_id(j),
        "vocab_index": names[j].vocab_index,
        "name": names[j].name,
        "similarity": names[j].similarity,
    })).collect::<Vec<_>>() });
    let lines = (0..named.k()).map(|j| {
        vec![named.concept_id(j).to_string(), names[j].name.clone(), format!("{:.4}", names[j].similarity)]
    });
    ctx.emit(run, Report::new(json, table(&["concept", "name", "similarity"], lines)))
}

pub fn remove(
    ctx: &Ctx,
    query: Option<PathBuf>,
    concept: Option<String>,
    tau: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut run = Run::start("remove");
    let bank = load_bank(ctx, &mut run)?;
    let tau = tau.unwrap_or(ctx.cfg.removal.tau);
    let queries: Vec<Vec<f32>> = match (concept, query.or_else(|| ctx.cfg.removal.queries.clone())) {
        (Some(id), _) => {
            let j = (0..bank.k())
                .find(|&j| bank.concept_id(j) == id)
                .ok_or_else(|| CliError::Usage(format!("no concept {id:?} in the bank")))?;
            vec![bank.centroid(j).to_vec()]
        }
        (None, Some(path)) => {
            let projection = load_projection(ctx, &mut run)?;
            let m = projection.apply(&read(&mut run, &path)?)?;
            m.iter_rows().map(<[f32]>::to_vec).collect()
        }
        (None, None) => {
            return Err(CliError::Usage(
                "remove needs --query FILE, --concept ID or removal.queries".into(),
            ))
        }
    };
    if tau >= 1.0 {
        warn(&format!("tau = {tau}: cosine similarity never exceeds 1, nothing can be removed"));
    }

    let mut current = bank.clone();
    let mut removed = Vec::new();
    for q in &queries {
        let r = concept_bank::remove_concepts(&current, q, tau)?;
        removed.extend(r.removed.iter().map(|&j| current.concept_id(j).to_string()));
        current = r.bank;
    }
    if removed.is_empty() && tau < 1.0 {
        warn(&format!("no concept exceeded tau = {tau}; bank unchanged"));
    }
    let out = out.unwrap_or_else(|| ctx.cfg.paths.in_output("bank.removed.emb"));
    create_out(ctx.out_dir())?;
    current.save(&out)?;
    run.output(&out);

    let json = json!({
        "tau": tau,
        "queries": queries.len(),
        "k_before": bank.k(),
        "k_after": current.k(),
        "removed": removed,
    });
    let report = Report::pairs(
        json,
        &[
            ("tau", tau.to_string()),
            ("queries", queries.len().to_string()),
            ("k", format!("{} -> {}", bank.k(), current.k())),
            ("removed", if removed.is_empty() { "-".into() } else { removed.join(", ") }),
        ],
    );
    ctx.emit(run, report)
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let mut run = Run::start("eval");
    let bank = load_bank(ctx, &mut run)?;
    let projection = load_projection(ctx, &mut run)?;
    let model = load_model(ctx, &mut run, &bank)?;
    let test = read(&mut run, &ctx.cfg.paths.test())?;
    let names = class_names(ctx, &mut run, &test)?;
    let truth = pipeline::class_labels(&test)?;
    let acts = pipeline::bank_activations(&test, &bank, &projection)?;
    let pred = cbm::predict(&model, &acts)?.labels;
    let accuracy = metrics::top1_accuracy(&pred, truth)?;

    let probe = if ctx.cfg.eval.probe {
        let tc = ctx.cfg.training.train_config();
        run.seed("training", tc.seed);
        let train = read(&mut run, &ctx.cfg.paths.train())?;
        Some(pipeline::probe_accuracy(&train, &test, &tc)?)
    } else {
        None
    };

    let classes = model.classes;
    let mut per_class = vec![(0usize, 0usize); classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if t < classes {
            per_class[t].1 += 1;
            per_class[t].0 += usize::from(p == t);
        }
    }
    let zero = model.near_zero_fraction(ctx.cfg.eval.zero_threshold);
    let mut lines: Vec<Vec<String>> = per_class
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(c, (hit, n))| vec![class_name(&names, c), format!("{hit}/{n}"), format!("{:.4}", *hit as f64 / *n as f64)])
        .collect();
    lines.push(vec!["overall".into(), format!("{}/{}", pred.iter().zip(truth).filter(|(p, t)| p == t).count(), truth.len()), format!("{accuracy:.4}")]);
    if let Some(p) = probe {
        lines.push(vec!["linear probe".into(), String::new(), format!("{p:.4}")]);
    }
    let summary = format!("concepts {}  near-zero weights {zero:.4}", model.k);
    let json = json!({
        "accuracy": accuracy,
        "probe_accuracy": probe,
        "probe_gap": probe.map(|p| p - accuracy),
        "test_images": truth.len(),
        "concepts": model.k,
        "near_zero_fraction": zero,
        "per_class": per_class.iter().map(|(h, n)| json!({"correct": h, "total": n})).collect::<Vec<_>>(),
    });
    let body = table(&["class", "correct", "accuracy"], lines);
    ctx.emit(run, Report::new(json, format!("{body}\n{summary}")))
}

pub fn gpg(ctx: &Ctx, samples: &Path) -> Result<(), CliError> {
    let mut run = Run::start("gpg");
    run.input(samples);
    let s = metrics::read_gpg_samples(samples)?;
    let report = metrics::gpg_aggregate(&s)?;
    let json = serde_json::to_value(report).expect("plain struct");
    ctx.emit(run, Report::new(json, report.to_string()))
}

/// Assignments from a bank file, a JSON array or whitespace-separated integers.
fn read_assignments(run: &mut Run, path: &Path) -> Result<Vec<usize>, CliError> {
    run.input(path);
    if path.extension().is_some_and(|e| e == "emb") {
        let bank = ConceptBank::load(path)?;
        return bank
            .assignments()
            .iter()
            .map(|a| a.ok_or_else(|| CliError::Input(format!("{}: bank has removed concepts", path.display()))))
            .collect();
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let parsed: Result<Vec<usize>, String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        text.split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
            .collect()
    };
    parsed.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn nmi(ctx: &Ctx, a: &Path, b: &Path) -> Result<(), CliError> {
    let mut run = Run::start("nmi");
    let x = read_assignments(&mut run, a)?;
    let y = read_assignments(&mut run, b)?;
    let v = concept_bank::nmi(&x, &y)?;
    let json = json!({"nmi": v, "rows": x.len()});
    ctx.emit(run, Report::pairs(json, &[("nmi", format!("{v:?}")), ("rows", x.len().to_string())]))
}

pub fn validate(ctx: &Ctx, files: &[PathBuf]) -> Result<bool, CliError> {
    let mut run = Run::start("validate");
    let mut results = Vec::new();
    let mut lines = Vec::new();
    let mut clean = true;
    for f in files {
        run.input(f);
        let is_gpg = f.extension().is_some_and(|e| e == "jsonl");
        let (shape, findings, detail) = if is_gpg {
            let s = metrics::read_gpg_samples(f)?;
            (format!("{} samples", s.len()), 0, String::new())
        } else {
            let m = tensor_io::read_embeddings(f)?;
            let report = m.validate();
            (format!("{} x {}", m.rows(), m.dim()), report.findings(), report.to_string())
        };
        clean &= findings == 0;
        results.push(json!({"path": f, "shape": shape, "findings": findings, "detail": detail}));
        lines.push(vec![f.display().to_string(), shape, findings.to_string()]);
    }
    let json = json!({"files": results, "clean": clean});
    ctx.emit(run, Report::new(json, table(&["file", "shape", "findings"], lines)))?;
    Ok(clean)
}
