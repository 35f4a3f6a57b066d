//! Training, evaluation, gradient-check, sweep and ablation drivers.
//!
//! Training decomposes each mini-batch into independent per-sample passes
//! (one small tape each) and reduces losses and gradients in sample order,
//! so results are bitwise identical for any worker count and exactly
//! reproducible from (seed, config).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, MeanAp, ReportRow, ScoreMatrix};
use crate::model::{self, Model};
use crate::objective::{self, ClassEmbeddingTable, LabelVector};
use crate::synth::Dataset;
use crate::tensor::{io, AdamState, Scalar, Tape, Tensor, TensorId};

const SALT_SPLIT: u64 = 0x53_504c;
const SALT_SHUFFLE: u64 = 0x53_4846;
const SALT_BASELINE: u64 = 0x42_4153;

/// Evaluation protocol: unseen classes only, or the full label set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Zsl,
    Gzsl,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Zsl => "zsl",
            Protocol::Gzsl => "gzsl",
        }
    }

    pub fn class_ids(self, table: &ClassEmbeddingTable) -> Vec<usize> {
        match self {
            Protocol::Zsl => table.unseen().to_vec(),
            Protocol::Gzsl => table.all_ids(),
        }
    }
}

/// In-memory result of fitting a model to a dataset.
pub struct FitResult {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
    pub val_maps: Vec<f64>,
    pub epoch_skipped: Vec<usize>,
}

/// On-disk summary of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub loss_log: PathBuf,
    pub checkpoint_blob: PathBuf,
    pub checkpoint_index: PathBuf,
    pub epoch_losses: Vec<f64>,
    pub val_maps: Vec<f64>,
    pub skipped_samples: usize,
}

fn per_sample_pass(
    model: &Model,
    cfg: &RunConfig,
    image: Tensor,
    y: &LabelVector,
    table: &ClassEmbeddingTable,
) -> Result<Option<(f64, Vec<Vec<f32>>)>> {
    let mut tape: Tape<f32> = Tape::new();
    let ids = model.bind(&mut tape, cfg)?;
    let ordered = model::ordered_param_ids(&ids, cfg.learnable_affinity);
    let img = tape.leaf(image);
    let s = model::forward(&mut tape, &ids, cfg, img)?;
    let Some(rank) = objective::rank_loss(&mut tape, s, y, table)? else {
        return Ok(None);
    };
    let reg = objective::reg_loss(&mut tape, s, cfg.reg_mode)?;
    let weighted_rank = tape.mul_scalar(rank, objective::sample_weight(y) * (1.0 - cfg.lambda));
    let weighted_reg = tape.mul_scalar(reg, cfg.lambda);
    let term = tape.add(weighted_rank, weighted_reg)?;
    tape.backward(term)?;
    let loss = tape.value(term).item() as f64;
    let grads = ordered
        .iter()
        .map(|&id| tape.grad(id).expect("parameters require grad").to_vec())
        .collect();
    Ok(Some((loss, grads)))
}

/// One optimizer step over a batch. Losses and gradients are reduced in
/// sample order whatever the thread count. Returns (summed loss, effective
/// samples, skipped samples).
fn batch_step(
    model: &mut Model,
    cfg: &RunConfig,
    ds: &Dataset,
    batch: &[usize],
    adam: &mut AdamState,
) -> Result<(f64, usize, usize)> {
    let table = &ds.table;
    let mut results: Vec<Option<(f64, Vec<Vec<f32>>)>> = Vec::with_capacity(batch.len());
    if cfg.threads <= 1 || batch.len() <= 1 {
        for &i in batch {
            let y = ds.seen_label_vector(i)?;
            results.push(per_sample_pass(model, cfg, ds.image(i), &y, table)?);
        }
    } else {
        let chunk = batch.len().div_ceil(cfg.threads);
        let shared: &Model = model;
        let collected: Result<Vec<Vec<Option<(f64, Vec<Vec<f32>>)>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || -> Result<Vec<Option<(f64, Vec<Vec<f32>>)>>> {
                        part.iter()
                            .map(|&i| {
                                let y = ds.seen_label_vector(i)?;
                                per_sample_pass(shared, cfg, ds.image(i), &y, table)
                            })
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training worker panicked"))
                .collect()
        });
        for part in collected? {
            results.extend(part);
        }
    }

    let mut loss_sum = 0.0f64;
    let mut effective = 0usize;
    let mut grad_acc: Option<Vec<Vec<f32>>> = None;
    for r in results.iter() {
        let Some((loss, grads)) = r else { continue };
        loss_sum += loss;
        effective += 1;
        match grad_acc.as_mut() {
            None => grad_acc = Some(grads.clone()),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
    }
    let skipped = batch.len() - effective;
    let Some(mut acc) = grad_acc else {
        // whole batch skipped; no step
        return Ok((0.0, 0, skipped));
    };
    let scale = 1.0 / effective as f32;
    for g in &mut acc {
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    let mut params = model.params_mut();
    for (p, g) in params.iter_mut().zip(acc) {
        p.grad = Some(g);
    }
    adam.step(&mut params)?;
    Ok((loss_sum, effective, skipped))
}

/// Deterministic train/validation split of the training indices.
pub fn split_train_val(cfg: &RunConfig, ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = ds.train_indices().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_SPLIT);
    idx.shuffle(&mut rng);
    let val_count = (idx.len() as f64 * cfg.val_fraction).round() as usize;
    let val = idx[..val_count].to_vec();
    let train = idx[val_count..].to_vec();
    (train, val)
}

/// Fit a fresh model on the dataset's training split. Pure in-memory
/// counterpart of [`train`].
pub fn fit(cfg: &RunConfig, ds: &Dataset) -> Result<FitResult> {
    cfg.validate()?;
    check_dataset_compat(cfg, ds)?;
    let mut model = Model::init(cfg)?;
    let mut adam = AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    let (train_idx, val_idx) = split_train_val(cfg, ds);
    if train_idx.is_empty() {
        return Err(Error::Usage("no training samples after validation split".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_SHUFFLE);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut val_maps = Vec::with_capacity(cfg.epochs);
    let mut epoch_skipped = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        if cfg.decay_epochs.contains(&epoch) {
            adam.lr *= cfg.decay_factor;
        }
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        let mut effective = 0usize;
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (l, e, s) = batch_step(&mut model, cfg, ds, batch, &mut adam)?;
            loss_sum += l;
            effective += e;
            skipped += s;
        }
        let mean_loss = if effective > 0 { loss_sum / effective as f64 } else { f64::NAN };
        let val_map = if val_idx.is_empty() {
            f64::NAN
        } else {
            validation_map(&model, cfg, ds, &val_idx)?
        };
        epoch_losses.push(mean_loss);
        val_maps.push(val_map);
        epoch_skipped.push(skipped);
    }
    Ok(FitResult {
        model,
        epoch_losses,
        val_maps,
        epoch_skipped,
    })
}

fn check_dataset_compat(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    if ds.table.d_w() != cfg.d_w {
        return Err(Error::Config(format!(
            "dataset embeddings have d_w {}, config wants {}",
            ds.table.d_w(),
            cfg.d_w
        )));
    }
    if ds.image_size() % 8 != 0 {
        return Err(Error::Config(format!(
            "dataset image size {} is not divisible by 8",
            ds.image_size()
        )));
    }
    Ok(())
}

/// Mean average precision over the seen classes on held-out training
/// images; the selection signal for sweeps.
fn validation_map(model: &Model, cfg: &RunConfig, ds: &Dataset, val_idx: &[usize]) -> Result<f64> {
    let seen = ds.table.seen().to_vec();
    let m = score_images(model, cfg, ds, val_idx, &seen)?;
    Ok(metrics::mean_ap(&m, &seen)?.map)
}

/// Score a set of images against the given class ids; rows follow the
/// order of `indices`, columns the order of `class_ids`.
pub fn score_images(
    model: &Model,
    cfg: &RunConfig,
    ds: &Dataset,
    indices: &[usize],
    class_ids: &[usize],
) -> Result<ScoreMatrix> {
    let l = class_ids.len();
    let score_one = |i: usize| -> Result<Vec<f32>> {
        let mut tape: Tape<f32> = Tape::new();
        let ids = model.bind(&mut tape, cfg)?;
        let img = tape.leaf(ds.image(i));
        let s = model::forward(&mut tape, &ids, cfg, img)?;
        let scores = objective::class_scores(&mut tape, s, &ds.table, class_ids)?;
        Ok(tape.data(scores).to_vec())
    };
    let mut all = vec![0.0f32; indices.len() * l];
    if cfg.threads <= 1 || indices.len() <= 1 {
        for (row, &i) in indices.iter().enumerate() {
            all[row * l..(row + 1) * l].copy_from_slice(&score_one(i)?);
        }
    } else {
        let chunk = indices.len().div_ceil(cfg.threads);
        let parts: Result<Vec<Vec<Vec<f32>>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = indices
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|&i| score_one(i)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring worker panicked"))
                .collect()
        });
        let mut row = 0usize;
        for part in parts? {
            for scores in part {
                all[row * l..(row + 1) * l].copy_from_slice(&scores);
                row += 1;
            }
        }
    }
    let mut gt = vec![0u8; indices.len() * l];
    for (row, &i) in indices.iter().enumerate() {
        let labels = ds.label_row(i);
        for (col, &c) in class_ids.iter().enumerate() {
            gt[row * l + col] = labels[c] as u8;
        }
    }
    ScoreMatrix::new(all, class_ids.to_vec(), gt, indices.len())
}

/// Score the test split under a protocol and compute top-K metrics + mAP.
pub fn evaluate(
    model: &Model,
    cfg: &RunConfig,
    ds: &Dataset,
    protocol: Protocol,
    ks: &[usize],
) -> Result<(Vec<ReportRow>, MeanAp)> {
    let class_ids = protocol.class_ids(&ds.table);
    let test: Vec<usize> = ds.test_indices().collect();
    let m = score_images(model, cfg, ds, &test, &class_ids)?;
    let map = metrics::mean_ap(&m, &class_ids)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let (p, r, f1) = metrics::topk_prf(&m, k)?;
        rows.push(ReportRow {
            protocol: protocol.name().to_string(),
            k,
            precision: p,
            recall: r,
            f1,
            map: map.map,
        });
    }
    Ok((rows, map))
}

/// Unseen-class mAP of the test split: the headline zero-shot number.
pub fn unseen_map(model: &Model, cfg: &RunConfig, ds: &Dataset) -> Result<f64> {
    let ids = Protocol::Zsl.class_ids(&ds.table);
    let test: Vec<usize> = ds.test_indices().collect();
    let m = score_images(model, cfg, ds, &test, &ids)?;
    Ok(metrics::mean_ap(&m, &ids)?.map)
}

/// mAP of uniform-random score matrices over the same images/classes:
/// the chance baseline for retrieval. Returns (mean, std) over repeats.
pub fn shuffle_baseline_map(
    ds: &Dataset,
    protocol: Protocol,
    repeats: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let class_ids = protocol.class_ids(&ds.table);
    let test: Vec<usize> = ds.test_indices().collect();
    let l = class_ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SALT_BASELINE);
    let mut gt = vec![0u8; test.len() * l];
    for (row, &i) in test.iter().enumerate() {
        let labels = ds.label_row(i);
        for (col, &c) in class_ids.iter().enumerate() {
            gt[row * l + col] = labels[c] as u8;
        }
    }
    let mut maps = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let scores: Vec<f32> = (0..test.len() * l).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = ScoreMatrix::new(scores, class_ids.clone(), gt.clone(), test.len())?;
        maps.push(metrics::mean_ap(&m, &class_ids)?.map);
    }
    let mean = maps.iter().sum::<f64>() / repeats as f64;
    let var = maps.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / repeats as f64;
    Ok((mean, var.sqrt()))
}

/// Train per the config's dataset/output paths and persist the run
/// directory: config snapshot, dataset checksum, loss log, checkpoint.
pub fn train(cfg: &RunConfig) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let ds = crate::synth::read_dataset(Path::new(&cfg.dataset_dir))?;
    train_on(cfg, &ds)
}

/// Same as [`train`] with the dataset already in memory.
pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<(Model, TrainOutcome)> {
    let fit_result = fit(cfg, ds)?;
    let run_dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_json())?;
    std::fs::write(run_dir.join("dataset_checksum.txt"), ds.content_checksum())?;

    let loss_log = run_dir.join("loss_log.csv");
    let mut csv = String::from("epoch,loss,val_map,skipped_samples\n");
    for (e, ((l, v), s)) in fit_result
        .epoch_losses
        .iter()
        .zip(&fit_result.val_maps)
        .zip(&fit_result.epoch_skipped)
        .enumerate()
    {
        csv.push_str(&format!("{},{},{},{}\n", e + 1, l, v, s));
    }
    std::fs::write(&loss_log, csv)?;

    let checkpoint_blob = run_dir.join("checkpoint.gbet");
    let checkpoint_index = run_dir.join("checkpoint.index.json");
    let named = fit_result.model.named();
    let named_ref: Vec<(String, &Tensor)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
    io::write_checkpoint(&checkpoint_blob, &checkpoint_index, &named_ref)?;

    let skipped_samples = fit_result.epoch_skipped.iter().sum();
    Ok((
        fit_result.model,
        TrainOutcome {
            run_dir,
            loss_log,
            checkpoint_blob,
            checkpoint_index,
            epoch_losses: fit_result.epoch_losses,
            val_maps: fit_result.val_maps,
            skipped_samples,
        },
    ))
}

/// Load a checkpoint into a freshly configured model.
pub fn load_model(cfg: &RunConfig, blob: &Path, index: &Path) -> Result<Model> {
    let tensors = io::read_checkpoint(blob, index)?;
    let mut model = Model::init(cfg)?;
    model.load_from(&tensors)?;
    Ok(model)
}

/// Evaluate a model under one or both protocols and write CSV/JSON
/// reports into `out_dir`.
pub fn evaluate_to_dir(
    model: &Model,
    cfg: &RunConfig,
    ds: &Dataset,
    protocols: &[Protocol],
    out_dir: &Path,
) -> Result<Vec<ReportRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut all_rows = Vec::new();
    for &p in protocols {
        let (rows, _) = evaluate(model, cfg, ds, p, &cfg.eval_ks)?;
        let csv = out_dir.join(format!("report_{}.csv", p.name()));
        let json = out_dir.join(format!("report_{}.json", p.name()));
        metrics::write_report(&csv, &json, &rows)?;
        all_rows.extend(rows);
    }
    Ok(all_rows)
}

// ── gradient check ──────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Run the f64 shadow of the graph (tolerance 1e-4) instead of the
    /// f32 storage path (tolerance 1e-2).
    pub shadow64: bool,
    pub coords_per_param: usize,
    pub seed: u64,
    /// Test fixture: scale the analytic gradient of parameters whose name
    /// contains this substring, to prove broken rules are caught.
    pub corrupt_param: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            shadow64: false,
            coords_per_param: 3,
            seed: 17,
            corrupt_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckRow {
    pub module: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_param: String,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub threshold: f64,
    pub step: f64,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradcheck: step {:.0e}, threshold {:.0e}\n",
            self.step, self.threshold
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "  {:<9} max_rel_err {:.3e}  checked {:>3}  kinks {:>2}  worst {}  [{}]\n",
                r.module,
                r.max_rel_err,
                r.checked,
                r.skipped_kinks,
                r.worst_param,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(if self.pass { "gradcheck: PASS\n" } else { "gradcheck: FAIL\n" });
        out
    }
}

/// Tiny configuration used by the end-to-end gradient check.
pub fn gradcheck_config() -> RunConfig {
    RunConfig {
        n_groups: 2,
        d_w: 4,
        channels: [4, 4, 8],
        epochs: 1,
        decay_epochs: vec![],
        batch_size: 2,
        ..RunConfig::default()
    }
}

fn gradcheck_dataset(seed: u64) -> Result<Dataset> {
    crate::synth::gen_dataset(&crate::synth::BenchmarkSpec {
        seed,
        num_seen: 6,
        num_unseen: 2,
        d_w: 4,
        image_size: 8,
        max_labels_per_image: 2,
        train_images: 4,
        test_images: 2,
        noise_std: 0.05,
    })
}

/// Finite-difference check of the full batch objective with respect to
/// every parameter tensor, on sampled coordinates.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let cfg = gradcheck_config();
    let ds = gradcheck_dataset(opts.seed)?;
    if opts.shadow64 {
        run_gradcheck::<f64>(&cfg, &ds, opts, 1e-3, 1e-4)
    } else {
        run_gradcheck::<f32>(&cfg, &ds, opts, 1e-2, 1e-2)
    }
}

fn run_gradcheck<T: Scalar>(
    cfg: &RunConfig,
    ds: &Dataset,
    opts: &GradcheckOptions,
    h: f64,
    threshold: f64,
) -> Result<GradcheckReport> {
    let model = Model::init(cfg)?;
    let names: Vec<String> = model.named().iter().map(|(n, _)| n.clone()).collect();
    let params: Vec<Tensor<T>> = model.named().iter().map(|(_, t)| t.cast::<T>()).collect();
    let batch: Vec<usize> = ds.train_indices().take(cfg.batch_size).collect();
    let samples: Vec<(Tensor, LabelVector)> = batch
        .iter()
        .map(|&i| Ok((ds.image(i), ds.seen_label_vector(i)?)))
        .collect::<Result<_>>()?;
    let table = ds.table.clone();
    let cfg2 = cfg.clone();

    let mut forward = move |tape: &mut Tape<T>, ids: &[TensorId]| -> Result<TensorId> {
        let model_ids = model::ids_from_ordered(tape, ids, &cfg2)?;
        let mut pairs = Vec::with_capacity(samples.len());
        for (img, y) in &samples {
            let img_id = tape.leaf_cast(img);
            let s = model::forward(tape, &model_ids, &cfg2, img_id)?;
            pairs.push((s, y.clone()));
        }
        let (loss, _) = objective::total_loss(tape, &pairs, cfg2.lambda, &table, cfg2.reg_mode)?;
        Ok(loss)
    };

    let (f0, mut analytic) = check::analytic_grads(&params, &mut forward)?;
    if let Some(needle) = &opts.corrupt_param {
        for (name, g) in names.iter().zip(analytic.iter_mut()) {
            if name.contains(needle.as_str()) {
                for v in g.iter_mut() {
                    *v *= 1.5;
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xC0_4D5);
    let mut rows: Vec<GradcheckRow> = Vec::new();
    for (pi, name) in names.iter().enumerate() {
        let module = name.split('.').next().unwrap_or("model").to_string();
        let numel = params[pi].numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        coords.shuffle(&mut rng);
        coords.truncate(opts.coords_per_param.min(numel));
        let mut max_err = 0.0f64;
        let mut checked = 0usize;
        let mut kinks = 0usize;
        let mut worst = String::new();
        for ci in coords {
            match check::central_diff(&params, &mut forward, pi, ci, h, f0)? {
                check::FdEstimate::Kink => kinks += 1,
                check::FdEstimate::Ok(fd) => {
                    checked += 1;
                    let floor = check::resolution_floor::<T>(h, f0);
                    let err = check::rel_err(analytic[pi][ci], fd, floor);
                    if err > max_err {
                        max_err = err;
                        worst = format!("{name}[{ci}]");
                    }
                }
            }
        }
        match rows.iter_mut().find(|r| r.module == module) {
            Some(row) => {
                if max_err > row.max_rel_err {
                    row.max_rel_err = max_err;
                    row.worst_param = worst;
                }
                row.checked += checked;
                row.skipped_kinks += kinks;
            }
            None => rows.push(GradcheckRow {
                module,
                max_rel_err: max_err,
                checked,
                skipped_kinks: kinks,
                worst_param: worst,
                pass: true,
            }),
        }
    }
    for r in &mut rows {
        r.pass = r.max_rel_err <= threshold;
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(GradcheckReport {
        rows,
        threshold,
        step: h,
        pass,
    })
}

// ── sweep and ablation ──────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n_groups: usize,
    pub lambda: f64,
    pub unseen_map: f64,
}

/// Train and evaluate every (n, λ) grid point; the summary lands in
/// `<output_dir>/sweep.csv` and each point trains into its own run dir.
pub fn sweep(base: &RunConfig, ds: &Dataset, ns: &[usize], lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if ns.is_empty() || lambdas.is_empty() {
        return Err(Error::Usage("sweep needs a nonempty grid".into()));
    }
    let mut rows = Vec::new();
    for &n in ns {
        for &lambda in lambdas {
            let cfg = RunConfig {
                n_groups: n,
                lambda,
                output_dir: format!("{}/sweep_n{}_l{}", base.output_dir, n, lambda),
                ..base.clone()
            };
            let (model, _) = train_on(&cfg, ds)?;
            rows.push(SweepRow {
                n_groups: n,
                lambda,
                unseen_map: unseen_map(&model, &cfg, ds)?,
            });
        }
    }
    let mut csv = String::from("n_groups,lambda,unseen_map\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.n_groups, r.lambda, r.unseen_map));
    }
    std::fs::create_dir_all(&base.output_dir)?;
    std::fs::write(Path::new(&base.output_dir).join("sweep.csv"), csv)?;
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub mlfef: bool,
    pub lid: bool,
    pub gem: bool,
    pub gla: bool,
    pub zsl_map: f64,
    pub gzsl_map: f64,
}

/// The ablation lattice rows a–f plus the full model.
pub fn ablation_lattice() -> Vec<(String, crate::config::AblationSwitches)> {
    use crate::config::AblationSwitches as A;
    vec![
        ("a".into(), A { mlfef: false, lid: false, gem: false, gla: false }),
        ("b".into(), A { mlfef: true, lid: false, gem: false, gla: false }),
        ("c".into(), A { mlfef: true, lid: true, gem: false, gla: false }),
        ("d".into(), A { mlfef: true, lid: false, gem: true, gla: false }),
        ("e".into(), A { mlfef: true, lid: true, gem: false, gla: true }),
        ("f".into(), A { mlfef: true, lid: false, gem: true, gla: true }),
        ("full".into(), A::all_on()),
    ]
}

/// Train and evaluate every lattice row; writes `<output_dir>/ablation.csv`.
pub fn ablate(base: &RunConfig, ds: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, switches) in ablation_lattice() {
        let cfg = RunConfig {
            ablation: switches,
            output_dir: format!("{}/ablate_{}", base.output_dir, name),
            ..base.clone()
        };
        let (model, _) = train_on(&cfg, ds)?;
        let (_, zsl) = evaluate(&model, &cfg, ds, Protocol::Zsl, &cfg.eval_ks)?;
        let (_, gzsl) = evaluate(&model, &cfg, ds, Protocol::Gzsl, &cfg.eval_ks)?;
        rows.push(AblationRow {
            name,
            mlfef: switches.mlfef,
            lid: switches.lid,
            gem: switches.gem,
            gla: switches.gla,
            zsl_map: zsl.map,
            gzsl_map: gzsl.map,
        });
    }
    let mut csv = String::from("row,mlfef,lid,gem,gla,zsl_map,gzsl_map\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name, r.mlfef as u8, r.lid as u8, r.gem as u8, r.gla as u8, r.zsl_map, r.gzsl_map
        ));
    }
    std::fs::create_dir_all(&base.output_dir)?;
    std::fs::write(Path::new(&base.output_dir).join("ablation.csv"), csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, BenchmarkSpec};

    fn tiny_benchmark(seed: u64) -> Dataset {
        gen_dataset(&BenchmarkSpec {
            seed,
            num_seen: 6,
            num_unseen: 2,
            d_w: 4,
            image_size: 16,
            max_labels_per_image: 2,
            train_images: 30,
            test_images: 10,
            noise_std: 0.05,
        })
        .unwrap()
    }

    fn tiny_cfg(out: &str) -> RunConfig {
        RunConfig {
            n_groups: 2,
            d_w: 4,
            channels: [4, 4, 8],
            epochs: 2,
            decay_epochs: vec![],
            batch_size: 8,
            output_dir: out.to_string(),
            ..RunConfig::default()
        }
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("gbe-harness-{tag}-{}", std::process::id()));
        std::fs::remove_dir_all(&d).ok();
        d
    }

    #[test]
    fn zero_epochs_checkpoint_equals_initialization() {
        let ds = tiny_benchmark(1);
        let dir = temp_dir("zero");
        let cfg = RunConfig {
            epochs: 0,
            ..tiny_cfg(dir.to_str().unwrap())
        };
        let (model, outcome) = train_on(&cfg, &ds).unwrap();
        let fresh = Model::init(&cfg).unwrap();
        for ((_, a), (_, b)) in model.named().iter().zip(fresh.named().iter()) {
            assert_eq!(a.data(), b.data());
        }
        let loaded = load_model(&cfg, &outcome.checkpoint_blob, &outcome.checkpoint_index).unwrap();
        for ((_, a), (_, b)) in loaded.named().iter().zip(fresh.named().iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert!(outcome.epoch_losses.is_empty());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn same_seed_same_config_is_bitwise_identical() {
        let ds = tiny_benchmark(2);
        let d1 = temp_dir("det1");
        let d2 = temp_dir("det2");
        let (_, o1) = train_on(&tiny_cfg(d1.to_str().unwrap()), &ds).unwrap();
        let (_, o2) = train_on(&tiny_cfg(d2.to_str().unwrap()), &ds).unwrap();
        let l1 = std::fs::read(&o1.loss_log).unwrap();
        let l2 = std::fs::read(&o2.loss_log).unwrap();
        assert_eq!(l1, l2);
        let c1 = std::fs::read(&o1.checkpoint_blob).unwrap();
        let c2 = std::fs::read(&o2.checkpoint_blob).unwrap();
        assert_eq!(c1, c2);
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let ds = tiny_benchmark(3);
        let base = tiny_cfg("unused");
        let one = fit(&RunConfig { threads: 1, ..base.clone() }, &ds).unwrap();
        let two = fit(&RunConfig { threads: 2, ..base }, &ds).unwrap();
        assert_eq!(one.epoch_losses, two.epoch_losses);
        for ((_, a), (_, b)) in one.model.named().iter().zip(two.model.named().iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn different_seeds_change_the_loss_path() {
        let ds = tiny_benchmark(4);
        let base = tiny_cfg("unused");
        let a = fit(&base, &ds).unwrap();
        let b = fit(&RunConfig { seed: 123, ..base }, &ds).unwrap();
        assert_ne!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn training_loss_decreases_on_a_two_class_toy_task() {
        // 2 seen classes, one label per image: 50 optimizer steps must show
        // strictly decreasing 10-step window medians of the batch loss.
        let ds = gen_dataset(&BenchmarkSpec {
            seed: 5,
            num_seen: 2,
            num_unseen: 1,
            d_w: 4,
            image_size: 16,
            max_labels_per_image: 1,
            train_images: 16,
            test_images: 4,
            noise_std: 0.02,
        })
        .unwrap();
        let cfg = RunConfig {
            n_groups: 2,
            d_w: 4,
            channels: [4, 4, 8],
            batch_size: 8,
            epochs: 1,
            decay_epochs: vec![],
            val_fraction: 0.0,
            lr: 1e-3,
            lambda: 0.1,
            ..RunConfig::default()
        };
        let mut model = Model::init(&cfg).unwrap();
        let mut adam = AdamState::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
        let idx: Vec<usize> = ds.train_indices().collect();
        let mut step_losses = Vec::new();
        for step in 0..50 {
            let batch: Vec<usize> = (0..8).map(|j| idx[(step * 8 + j) % idx.len()]).collect();
            let (loss, eff, _) = batch_step(&mut model, &cfg, &ds, &batch, &mut adam).unwrap();
            step_losses.push(loss / eff as f64);
        }
        let median = |w: &[f64]| {
            let mut v = w.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (v[v.len() / 2] + v[(v.len() - 1) / 2])
        };
        let medians: Vec<f64> = step_losses.chunks(10).map(median).collect();
        for pair in medians.windows(2) {
            assert!(
                pair[1] < pair[0],
                "10-step window medians must strictly decrease: {medians:?}"
            );
        }
    }

    #[test]
    fn gradcheck_passes_on_both_paths() {
        let f32_report = gradcheck(&GradcheckOptions::default()).unwrap();
        assert!(f32_report.pass, "{}", f32_report.render());
        let f64_report = gradcheck(&GradcheckOptions {
            shadow64: true,
            ..GradcheckOptions::default()
        })
        .unwrap();
        assert!(f64_report.pass, "{}", f64_report.render());
    }

    #[test]
    fn corrupted_gradient_is_reported_by_module() {
        let report = gradcheck(&GradcheckOptions {
            shadow64: true,
            corrupt_param: Some("lid.wq".into()),
            ..GradcheckOptions::default()
        })
        .unwrap();
        assert!(!report.pass);
        let bad: Vec<&GradcheckRow> = report.rows.iter().filter(|r| !r.pass).collect();
        assert!(bad.iter().all(|r| r.module == "lid"), "{}", report.render());
        assert!(bad[0].worst_param.contains("lid.wq"));
    }

    #[test]
    fn zsl_scoring_never_contains_seen_columns() {
        let ds = tiny_benchmark(6);
        let cfg = tiny_cfg("unused");
        let model = Model::init(&cfg).unwrap();
        let test: Vec<usize> = ds.test_indices().collect();
        let ids = Protocol::Zsl.class_ids(&ds.table);
        let m = score_images(&model, &cfg, &ds, &test, &ids).unwrap();
        for id in &m.label_ids {
            assert!(ds.table.unseen().contains(id));
            assert!(!ds.table.seen().contains(id));
        }
    }

    #[test]
    fn shuffle_baseline_matches_prevalence_scale() {
        let ds = tiny_benchmark(7);
        let (mean, std) = shuffle_baseline_map(&ds, Protocol::Zsl, 30, 9).unwrap();
        assert!(mean > 0.0 && mean < 1.0);
        assert!(std >= 0.0);
        // random ranking mAP should sit near the average positive rate
        let test: Vec<usize> = ds.test_indices().collect();
        let mut prevalence = 0.0;
        let mut classes = 0;
        for &c in ds.table.unseen() {
            let pos = test.iter().filter(|&&i| ds.label_row(i)[c] == 1.0).count();
            if pos > 0 {
                prevalence += pos as f64 / test.len() as f64;
                classes += 1;
            }
        }
        prevalence /= classes as f64;
        assert!(
            (mean - prevalence).abs() < 0.25,
            "baseline {mean} vs prevalence {prevalence}"
        );
    }

    #[test]
    fn sweep_emits_one_row_per_grid_point() {
        let ds = tiny_benchmark(8);
        let dir = temp_dir("sweep");
        let cfg = RunConfig {
            epochs: 1,
            ..tiny_cfg(dir.to_str().unwrap())
        };
        let rows = sweep(&cfg, &ds, &[2], &[0.0, 1.0]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(dir.join("sweep.csv").exists());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let err = train(&RunConfig {
            batch_size: 0,
            lambda: 7.0,
            ..RunConfig::default()
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("batch_size") && msg.contains("lambda"), "{msg}");
    }
}
