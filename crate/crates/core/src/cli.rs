//! Everything behind the `voicecloak` binary: one flat run
//! configuration (defaults < config file < flags), and the command
//! implementations — corpus synthesis, encoder training, corpus
//! protection, verification scoring, distortion audits, and the full
//! experiment grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio_io::{
    crop_fixed_patch, load_manifest, load_trials, read_wav, write_wav, DatasetManifest,
};
use crate::dsp::PIPELINE_RATE;
use crate::encoder::{train_logged, EncoderConfig, EncoderParams};
use crate::metrics::{
    audit_report, eer, fmt_sig6, min_dcf, score_trials, write_audit_csv, AuditReport, DcfParams,
};
use crate::slem::{
    amplitude_mask, protect_manifest, Mode, PHLWeights, ProtectionRecord, SlemConfig,
};
use crate::synthdata::{build_corpus, CorpusSpec};
use crate::{Error, Result};

/// Every tunable of the pipeline in one place. Paths stay per-command;
/// everything here can come from the defaults, a config file, or a
/// flag, in that order of precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 picks the machine's core count.
    pub threads: usize,
    // corpus
    pub speakers: usize,
    pub utterances: usize,
    pub duration_s: f64,
    pub rate: u32,
    // training
    pub encoder: String,
    pub epochs: u32,
    /// Epochs for the perturbation generator inside `experiment`. Kept
    /// short on purpose: noise distilled from a half-trained encoder
    /// steers a fresh model much harder than noise from a converged
    /// one, whose loss surface the victim never visits.
    pub generator_epochs: u32,
    pub learning_rate: f64,
    pub margin: f64,
    pub scale: f64,
    // perturbation
    pub epsilon: f64,
    pub steps: usize,
    /// None tracks epsilon / 10.
    pub step_size: Option<f64>,
    pub mask_fraction: f64,
    pub patch_length: usize,
    pub mode: Mode,
    pub plain_slem: bool,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    // scoring
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let slem = SlemConfig::default();
        let corpus = CorpusSpec::default();
        let dcf = DcfParams::default();
        RunConfig {
            seed: 42,
            threads: 0,
            speakers: corpus.n_speakers,
            utterances: corpus.utterances_per_speaker,
            duration_s: corpus.duration_s,
            rate: corpus.rate,
            encoder: "cfgA".to_string(),
            epochs: 8,
            generator_epochs: 4,
            learning_rate: crate::encoder::DEFAULT_LR,
            margin: crate::encoder::DEFAULT_MARGIN,
            scale: crate::encoder::DEFAULT_SCALE,
            epsilon: slem.epsilon,
            steps: slem.steps,
            step_size: None,
            mask_fraction: slem.mask_keep_fraction,
            patch_length: slem.patch_length,
            mode: slem.mode,
            plain_slem: slem.plain_slem,
            alpha: slem.weights.alpha,
            beta: slem.weights.beta,
            gamma: slem.weights.gamma,
            lambda: slem.weights.lambda,
            p_target: dcf.p_target,
            c_miss: dcf.c_miss,
            c_fa: dcf.c_fa,
        }
    }
}

impl RunConfig {
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            n_speakers: self.speakers,
            utterances_per_speaker: self.utterances,
            duration_s: self.duration_s,
            rate: self.rate,
            seed: self.seed,
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig::preset(&self.encoder)?.with_seed(self.seed))
    }

    pub fn slem_config(&self) -> SlemConfig {
        SlemConfig {
            epsilon: self.epsilon,
            steps: self.steps,
            step_size: self.step_size.unwrap_or(self.epsilon / 10.0),
            mask_keep_fraction: self.mask_fraction,
            patch_length: self.patch_length,
            weights: PHLWeights {
                alpha: self.alpha,
                beta: self.beta,
                gamma: self.gamma,
                lambda: self.lambda,
            },
            mode: self.mode,
            plain_slem: self.plain_slem,
        }
    }

    pub fn dcf_params(&self) -> DcfParams {
        DcfParams {
            p_target: self.p_target,
            c_miss: self.c_miss,
            c_fa: self.c_fa,
        }
    }
}

fn parse_value<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    key: &str,
    value: &str,
) -> Result<T> {
    value.parse().map_err(|_| Error::ConfigParse {
        path: path.to_path_buf(),
        line,
        msg: format!("cannot parse {value:?} as a value for {key}"),
    })
}

/// Apply a `key = value` settings file on top of `cfg`. Blank lines and
/// `#` comments are skipped; unknown keys are errors.
pub fn apply_config_file(cfg: &mut RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::ConfigParse {
            path: path.to_path_buf(),
            line,
            msg: "expected `key = value`".to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "seed" => cfg.seed = parse_value(path, line, key, value)?,
            "threads" => cfg.threads = parse_value(path, line, key, value)?,
            "speakers" => cfg.speakers = parse_value(path, line, key, value)?,
            "utterances" => cfg.utterances = parse_value(path, line, key, value)?,
            "duration_s" => cfg.duration_s = parse_value(path, line, key, value)?,
            "rate" => cfg.rate = parse_value(path, line, key, value)?,
            "encoder" => cfg.encoder = value.to_string(),
            "epochs" => cfg.epochs = parse_value(path, line, key, value)?,
            "generator_epochs" => cfg.generator_epochs = parse_value(path, line, key, value)?,
            "learning_rate" => cfg.learning_rate = parse_value(path, line, key, value)?,
            "margin" => cfg.margin = parse_value(path, line, key, value)?,
            "scale" => cfg.scale = parse_value(path, line, key, value)?,
            "epsilon" => cfg.epsilon = parse_value(path, line, key, value)?,
            "steps" => cfg.steps = parse_value(path, line, key, value)?,
            "step_size" => cfg.step_size = Some(parse_value(path, line, key, value)?),
            "mask_fraction" => cfg.mask_fraction = parse_value(path, line, key, value)?,
            "patch_length" => cfg.patch_length = parse_value(path, line, key, value)?,
            "mode" => {
                cfg.mode = match value {
                    "sample" => Mode::SampleWise,
                    "speaker" => Mode::SpeakerWise,
                    _ => {
                        return Err(Error::ConfigParse {
                            path: path.to_path_buf(),
                            line,
                            msg: format!("mode must be `sample` or `speaker`, got {value:?}"),
                        })
                    }
                }
            }
            "plain_slem" => cfg.plain_slem = parse_value(path, line, key, value)?,
            "alpha" => cfg.alpha = parse_value(path, line, key, value)?,
            "beta" => cfg.beta = parse_value(path, line, key, value)?,
            "gamma" => cfg.gamma = parse_value(path, line, key, value)?,
            "lambda" => cfg.lambda = parse_value(path, line, key, value)?,
            "p_target" => cfg.p_target = parse_value(path, line, key, value)?,
            "c_miss" => cfg.c_miss = parse_value(path, line, key, value)?,
            "c_fa" => cfg.c_fa = parse_value(path, line, key, value)?,
            _ => {
                return Err(Error::UnknownConfigKey {
                    path: path.to_path_buf(),
                    line,
                    key: key.to_string(),
                })
            }
        }
    }
    Ok(())
}

/// Build the synthetic corpus; prints and returns the manifest and
/// trial-list paths.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (manifest, trials) = build_corpus(&cfg.corpus_spec(), out_dir)?;
    println!("manifest={}", manifest.display());
    println!("trials={}", trials.display());
    Ok((manifest, trials))
}

/// Train an encoder preset on a manifest and save the model file.
/// Prints the final-epoch loss, and the trial EER/minDCF when a trial
/// list is given.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest_path: &Path,
    out_model: &Path,
    trials_path: Option<&Path>,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let enc = cfg.encoder_config()?;
    let (params, losses) = train_logged(
        &manifest,
        &enc,
        cfg.epochs,
        cfg.learning_rate,
        cfg.margin,
        cfg.scale,
        cfg.patch_length,
    )?;
    params.save(out_model)?;
    for (i, l) in losses.iter().enumerate() {
        eprintln!("epoch {:>3}: loss {}", i + 1, fmt_sig6(*l));
    }
    match losses.last() {
        Some(l) => println!("final_epoch_loss={}", fmt_sig6(*l)),
        None => println!("final_epoch_loss=n/a (0 epochs)"),
    }
    println!("model={}", out_model.display());
    if let Some(tp) = trials_path {
        let trials = load_trials(tp)?;
        let scores = score_trials(&params, &trials, cfg.patch_length)?;
        print_eer_line(eer(&scores)?, min_dcf(&scores, &cfg.dcf_params())?);
    }
    Ok(())
}

/// Protect a corpus with a saved model; writes the mirrored WAVs,
/// `manifest.csv`, and `protection.log` under `out_dir`.
pub fn cmd_protect(
    cfg: &RunConfig,
    model_path: &Path,
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<Vec<ProtectionRecord>> {
    let params = EncoderParams::load(model_path)?;
    let manifest = load_manifest(manifest_path)?;
    let records = protect_manifest(&params, &manifest, out_dir, &cfg.slem_config())?;
    let max_linf = records.iter().fold(0.0f64, |m, r| m.max(r.delta_linf));
    println!(
        "protected {} files -> {} (max |delta| {})",
        records.len(),
        out_dir.display(),
        fmt_sig6(max_linf)
    );
    Ok(records)
}

fn print_eer_line(eer_pct: f64, dcf: f64) {
    println!("EER={}% minDCF={}", fmt_sig6(eer_pct), fmt_sig6(dcf));
}

/// Train a fresh encoder on a manifest (clean or protected) and score
/// the trial list. Prints `EER=<x>% minDCF=<y>`; returns the pair.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    manifest_path: &Path,
    trials_path: &Path,
) -> Result<(f64, f64)> {
    let manifest = load_manifest(manifest_path)?;
    let trials = load_trials(trials_path)?;
    let enc = cfg.encoder_config()?;
    let params = crate::encoder::train(
        &manifest,
        &enc,
        cfg.epochs,
        cfg.learning_rate,
        cfg.margin,
        cfg.scale,
        cfg.patch_length,
    )?;
    let scores = score_trials(&params, &trials, cfg.patch_length)?;
    let e = eer(&scores)?;
    let d = min_dcf(&scores, &cfg.dcf_params())?;
    print_eer_line(e, d);
    Ok((e, d))
}

/// Audit a protected corpus against its clean manifest; writes the CSV
/// and prints the mean row.
pub fn cmd_audit(
    cfg: &RunConfig,
    clean_manifest: &Path,
    protected_dir: &Path,
    out_csv: &Path,
) -> Result<AuditReport> {
    let manifest = load_manifest(clean_manifest)?;
    let report = audit_report(&manifest, protected_dir, cfg.patch_length)?;
    write_audit_csv(&report, out_csv)?;
    let snr = match report.mean_snr_db {
        Some(v) => fmt_sig6(v),
        None => "zero_noise".to_string(),
    };
    println!(
        "mean snr_db={} mse_e6={} stoi={} ({} files) -> {}",
        snr,
        fmt_sig6(report.mean_mse_e6),
        fmt_sig6(report.mean_stoi),
        report.rows.len(),
        out_csv.display()
    );
    Ok(report)
}

pub const RESULTS_HEADER: &str =
    "condition,train_config,eer_pct,min_dcf,mean_snr_db,mean_mse_e6,mean_stoi";

/// One line of the experiment results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub condition: String,
    pub train_config: String,
    pub eer_pct: f64,
    pub min_dcf: f64,
    pub mean_snr_db: Option<f64>,
    pub mean_mse_e6: f64,
    pub mean_stoi: f64,
}

impl ConditionRow {
    fn csv_line(&self) -> String {
        let snr = match self.mean_snr_db {
            Some(v) => fmt_sig6(v),
            None => "zero_noise".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.condition,
            self.train_config,
            fmt_sig6(self.eer_pct),
            fmt_sig6(self.min_dcf),
            snr,
            fmt_sig6(self.mean_mse_e6),
            fmt_sig6(self.mean_stoi)
        )
    }
}

/// Everything the experiment produced, for callers that want more than
/// the exit code.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub rows: Vec<ConditionRow>,
    pub csv: String,
    pub csv_path: PathBuf,
    /// Per-utterance perturbation records of each protected condition.
    pub protection: BTreeMap<String, Vec<ProtectionRecord>>,
}

fn results_csv(rows: &[ConditionRow], failure: Option<&str>) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    if let Some(msg) = failure {
        out.push_str(&format!("FAILED,{},,,,,\n", msg.replace(',', ";")));
    }
    out
}

/// The random-noise baseline: per-sample uniform noise in [-eps, +eps]
/// on the same amplitude mask and patch the optimizer would use,
/// seeded per utterance on a stream range disjoint from the corpus
/// generator's.
fn write_random_noise_corpus(
    manifest: &DatasetManifest,
    out_dir: &Path,
    slem: &SlemConfig,
    seed: u64,
) -> Result<()> {
    manifest.entries.par_iter().enumerate().try_for_each(
        |(idx, entry)| -> Result<()> {
            let clip = read_wav(manifest.resolve(&entry.rel_path))?;
            if clip.rate != PIPELINE_RATE {
                return Err(Error::RateMismatch {
                    left: PIPELINE_RATE,
                    right: clip.rate,
                });
            }
            let patch = crop_fixed_patch(&clip, slem.patch_length)?;
            let mask = amplitude_mask(&patch, slem.mask_keep_fraction)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((1 << 40) | idx as u64);
            let mut out = clip.clone();
            for (s, &m) in out.samples.iter_mut().zip(mask.iter()) {
                if m == 1 {
                    *s = (*s + rng.gen_range(-slem.epsilon..=slem.epsilon)).clamp(-1.0, 1.0);
                }
            }
            let dst = out_dir.join(&entry.rel_path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_wav(&dst, &out)
        },
    )?;
    let manifest_path = out_dir.join("manifest.csv");
    let mut mf = String::new();
    for entry in &manifest.entries {
        mf.push_str(&format!("{},{}\n", entry.rel_path, entry.speaker));
    }
    fs::write(&manifest_path, mf).map_err(|e| Error::io(&manifest_path, e))
}

struct ExperimentState {
    rows: Vec<ConditionRow>,
    protection: BTreeMap<String, Vec<ProtectionRecord>>,
}

/// The full grid. Five corpora come out of one generator model; each
/// is retrained from scratch and scored against the clean held-out
/// trials; the two extra rows retrain the transfer preset on the clean
/// and perceptually protected corpora.
fn experiment_inner(cfg: &RunConfig, out_dir: &Path, state: &mut ExperimentState) -> Result<()> {
    let corpus_dir = out_dir.join("corpus");
    let (manifest_path, trials_path) = build_corpus(&cfg.corpus_spec(), &corpus_dir)?;
    let manifest = load_manifest(&manifest_path)?;
    let trials = load_trials(&trials_path)?;
    println!("corpus ready: {} train files", manifest.entries.len());

    let gen_cfg = cfg.encoder_config()?;
    let gen = crate::encoder::train(
        &manifest,
        &gen_cfg,
        cfg.generator_epochs,
        cfg.learning_rate,
        cfg.margin,
        cfg.scale,
        cfg.patch_length,
    )?;
    gen.save(out_dir.join("generator.vcm"))?;
    println!(
        "generator model trained ({} epochs)",
        cfg.generator_epochs
    );

    let slem_base = cfg.slem_config();
    let conditions: [(&str, Option<SlemConfig>); 5] = [
        ("clean", None),
        ("random_noise", None),
        (
            "slem",
            Some(SlemConfig {
                plain_slem: true,
                mode: Mode::SampleWise,
                ..slem_base.clone()
            }),
        ),
        (
            "pslem",
            Some(SlemConfig {
                plain_slem: false,
                mode: Mode::SampleWise,
                ..slem_base.clone()
            }),
        ),
        (
            "speaker_pslem",
            Some(SlemConfig {
                plain_slem: false,
                mode: Mode::SpeakerWise,
                ..slem_base.clone()
            }),
        ),
    ];

    let mut dirs: BTreeMap<&str, PathBuf> = BTreeMap::new();
    for (name, slem_cfg) in &conditions {
        let dir = if *name == "clean" {
            corpus_dir.clone()
        } else {
            let dir = out_dir.join(name);
            match slem_cfg {
                Some(sc) => {
                    let records = protect_manifest(&gen, &manifest, &dir, sc)?;
                    state.protection.insert(name.to_string(), records);
                }
                None => write_random_noise_corpus(&manifest, &dir, &slem_base, cfg.seed)?,
            }
            dir
        };
        println!("corpus ready: {name}");
        dirs.insert(name, dir);
    }

    let mut audits: BTreeMap<&str, AuditReport> = BTreeMap::new();
    for (name, _) in &conditions {
        let report = audit_report(&manifest, &dirs[name], cfg.patch_length)?;
        write_audit_csv(&report, out_dir.join(format!("audit_{name}.csv")))?;
        audits.insert(name, report);
    }
    println!("audits done");

    // retrains: fresh seeds so nothing is shared with the generator
    let retrain_a = EncoderConfig::preset(&cfg.encoder)?.with_seed(cfg.seed + 1);
    let transfer_b = EncoderConfig::preset("cfgB")?.with_seed(cfg.seed + 2);
    let grid: Vec<(&str, &EncoderConfig, &str)> = conditions
        .iter()
        .map(|(name, _)| (*name, &retrain_a, cfg.encoder.as_str()))
        .chain([
            ("clean", &transfer_b, "cfgB"),
            ("pslem", &transfer_b, "cfgB"),
        ])
        .collect();

    for (name, enc, enc_name) in grid {
        let cond_manifest = if name == "clean" {
            manifest.clone()
        } else {
            let mut m = load_manifest(dirs[name].join("manifest.csv"))?;
            m.base_dir = dirs[name].clone();
            m
        };
        let params = crate::encoder::train(
            &cond_manifest,
            enc,
            cfg.epochs,
            cfg.learning_rate,
            cfg.margin,
            cfg.scale,
            cfg.patch_length,
        )?;
        let scores = score_trials(&params, &trials, cfg.patch_length)?;
        let audit = &audits[name];
        let row = ConditionRow {
            condition: name.to_string(),
            train_config: enc_name.to_string(),
            eer_pct: eer(&scores)?,
            min_dcf: min_dcf(&scores, &cfg.dcf_params())?,
            mean_snr_db: audit.mean_snr_db,
            mean_mse_e6: audit.mean_mse_e6,
            mean_stoi: audit.mean_stoi,
        };
        println!("{}", row.csv_line());
        state.rows.push(row);
    }
    Ok(())
}

/// Run the grid; always writes `results.csv` (with a FAILED marker row
/// when a stage died) and returns the collected outcome on success.
pub fn cmd_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut state = ExperimentState {
        rows: Vec::new(),
        protection: BTreeMap::new(),
    };
    let csv_path = out_dir.join("results.csv");
    println!("{RESULTS_HEADER}");
    match experiment_inner(cfg, out_dir, &mut state) {
        Ok(()) => {
            let csv = results_csv(&state.rows, None);
            fs::write(&csv_path, &csv).map_err(|e| Error::io(&csv_path, e))?;
            println!("results -> {}", csv_path.display());
            Ok(ExperimentOutcome {
                rows: state.rows,
                csv,
                csv_path,
                protection: state.protection,
            })
        }
        Err(e) => {
            let csv = results_csv(&state.rows, Some(&e.to_string()));
            // best effort: keep whatever part of the table exists
            let _ = fs::write(&csv_path, &csv);
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_module_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.slem_config(), SlemConfig::default());
        assert_eq!(cfg.corpus_spec(), CorpusSpec {seed: 42, ..CorpusSpec::default()});
        assert_eq!(cfg.dcf_params(), DcfParams::default());
        assert_eq!(cfg.encoder_config().unwrap(), EncoderConfig::preset("cfgA").unwrap().with_seed(42));
    }

    #[test]
    fn step_size_tracks_epsilon_unless_pinned() {
        let mut cfg = RunConfig {
            epsilon: 0.01,
            ..RunConfig::default()
        };
        assert_eq!(cfg.slem_config().step_size, 0.001);
        cfg.step_size = Some(0.0002);
        assert_eq!(cfg.slem_config().step_size, 0.0002);
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");

        std::fs::write(
            &path,
            "# comment\n\nseed = 7\nepsilon= 0.01\nmode = speaker\nplain_slem = true\nencoder = cfgC\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        apply_config_file(&mut cfg, &path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.epsilon, 0.01);
        assert_eq!(cfg.mode, Mode::SpeakerWise);
        assert!(cfg.plain_slem);
        assert_eq!(cfg.encoder, "cfgC");

        std::fs::write(&path, "bogus_key = 1\n").unwrap();
        let mut cfg = RunConfig::default();
        assert!(matches!(
            apply_config_file(&mut cfg, &path),
            Err(Error::UnknownConfigKey { line: 1, .. })
        ));

        std::fs::write(&path, "epsilon = abc\n").unwrap();
        assert!(matches!(
            apply_config_file(&mut RunConfig::default(), &path),
            Err(Error::ConfigParse { line: 1, .. })
        ));

        std::fs::write(&path, "just a line\n").unwrap();
        assert!(matches!(
            apply_config_file(&mut RunConfig::default(), &path),
            Err(Error::ConfigParse { .. })
        ));
    }

    #[test]
    fn results_csv_rows_and_failure_marker() {
        let row = ConditionRow {
            condition: "clean".into(),
            train_config: "cfgA".into(),
            eer_pct: 12.5,
            min_dcf: 0.75,
            mean_snr_db: None,
            mean_mse_e6: 0.0,
            mean_stoi: 1.0,
        };
        let csv = results_csv(&[row.clone()], None);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "clean,cfgA,12.5000,0.750000,zero_noise,0,1.00000"
        );
        assert!(lines.next().is_none());

        let with_failure = results_csv(&[row], Some("stage x, died"));
        assert!(with_failure.ends_with("FAILED,stage x; died,,,,,\n"));
    }
}
