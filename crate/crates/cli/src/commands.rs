use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use edcs_core::absorption::{
    fit_cell_params, ingest_line_list, scale_strengths, FitOptions, FitResult, FreeParams, GasCell, MeasuredPoint,
};
use edcs_core::comb::squeezed_phases;
use edcs_core::detection::{beatnote_with_selector, source_profile, write_beatnotes_csv, BeatnoteRecord};
use edcs_core::dsp::{
    extract_beatnotes, write_spectrum_csv, ExtractOptions, InterferogramWriter, SegmentAnalyzer, SpectrumAccumulator,
    SynthesisConfig, Synthesizer,
};
use edcs_core::gaussian::{mixed_tmsv_from_measured, QuadratureSelector};
use edcs_core::metrics::{
    absorption_robustness, precision_vs_averages, uar_sweep, Arm, PrecisionConfig, RobustnessConfig, RobustnessRow,
    SpeedupResult, UarSweepResult,
};
use edcs_core::units::to_db;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Scenario};
use crate::error::{CliError, Result};

/// Blocks synthesized in parallel before being written in order.
const BATCH_BLOCKS: usize = 64;

/// Output directory plus the hash stamped on every artifact.
pub struct Sink {
    pub dir: PathBuf,
    pub config_sha256: String,
}

impl Sink {
    pub fn new(dir: PathBuf, config_sha256: String) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self { dir, config_sha256 })
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(CliError::io(&path))?;
        Ok((path, BufWriter::new(f)))
    }

    /// CSV with a `# config_sha256:` first line.
    pub fn csv(&self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = format!("# config_sha256: {}\n", self.config_sha256).into_bytes();
        body(&mut buf)?;
        let (path, mut w) = self.create(name)?;
        w.write_all(&buf).and_then(|_| w.flush()).map_err(CliError::io(&path))?;
        Ok(path)
    }

    pub fn rows<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        self.csv(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for r in rows {
                w.serialize(r).map_err(|source| CliError::Csv {
                    path: name.into(),
                    source,
                })?;
            }
            w.flush().map_err(CliError::io(name))
        })
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            config_sha256: &'a str,
            #[serde(flatten)]
            result: &'a T,
        }
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(
            &mut w,
            &Stamped {
                config_sha256: &self.config_sha256,
                result: value,
            },
        )?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(CliError::io(&path))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezeRow {
    pub pair: u32,
    pub input_squeeze_db: f64,
    pub input_antisqueeze_db: f64,
    pub source_squeeze_db: f64,
    pub source_antisqueeze_db: f64,
    pub detected_squeeze_db: f64,
    pub detected_antisqueeze_db: f64,
}

/// Per-pair squeezing at the source and as seen by the detector, relative to
/// the detector's own vacuum noise `1 + electrical floor`.
pub fn squeeze_report(cfg: &RunConfig) -> Result<Vec<SqueezeRow>> {
    cfg.validate()?;
    let profile = match cfg.scenario {
        Scenario::Edcs => cfg.squeezing.profile.clone(),
        Scenario::ClassicalDcs => cfg.squeezing.profile.vacuum_like(),
    };
    let source = source_profile(&profile, cfg.squeezing.reference, &cfg.detection)?;
    let vac = 1.0 + cfg.detection.electrical_floor();
    profile
        .pairs()
        .iter()
        .zip(source.pairs())
        .enumerate()
        .map(|(i, (input, src))| {
            let n = i as u32 + 1;
            let pair = mixed_tmsv_from_measured(src.squeeze_db, src.antisqueeze_db)
                .and_then(|m| m.state(n))
                .map_err(CliError::at(format!("squeezing.profile.pairs[{i}]")))?;
            let (a, b) = squeezed_phases(&pair, (0.0, 0.0));
            let var = |ph: [f64; 2]| -> Result<f64> {
                let sel = QuadratureSelector::balanced(ph);
                Ok(beatnote_with_selector(&pair, &sel, 1.0, 1.0, &cfg.detection, 0.0)?.noise_var)
            };
            Ok(SqueezeRow {
                pair: n,
                input_squeeze_db: input.squeeze_db,
                input_antisqueeze_db: input.antisqueeze_db,
                source_squeeze_db: src.squeeze_db,
                source_antisqueeze_db: src.antisqueeze_db,
                detected_squeeze_db: -to_db(var([a, b])? / vac),
                detected_antisqueeze_db: to_db(var([a, b + std::f64::consts::PI])? / vac),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRow {
    pub n: u32,
    pub freq_hz: f64,
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    pub amplitude_sigma: f64,
    pub noise_floor: f64,
    pub model_noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub scenario: Scenario,
    pub seed: u64,
    pub n_samples: usize,
    pub segment_len: usize,
    pub n_segments: usize,
    pub interferogram: Option<PathBuf>,
    pub interferogram_bytes: Option<u64>,
    pub beats: Vec<ExtractedRow>,
}

/// Synthesizes the interferogram of the configured arm, streams it to disk
/// and averages segment spectra on the way.
pub fn simulate(cfg: &RunConfig, sink: &Sink, write_ifg: bool) -> Result<SimulateSummary> {
    cfg.validate()?;
    let arm = match cfg.scenario {
        Scenario::Edcs => Arm::Edcs,
        Scenario::ClassicalDcs => Arm::Dcs,
    };
    let records = cfg.experiment().sample_records(arm)?;
    let d = &cfg.dsp;
    let n_samples = d.n_samples()?;
    let (seg_len, n_segments) = d.segments()?;
    let synth = Synthesizer::new(
        &records,
        &SynthesisConfig {
            sample_rate_hz: d.sample_rate_hz,
            duration_s: d.duration_s,
            block_len: d.block_len.unwrap_or(seg_len),
            kernel_half_width_hz: d.kernel_half_width_hz,
            phase_noise: d.phase_noise,
            noiseless: false,
            seed: cfg.seed,
        },
    )
    .map_err(CliError::at("dsp"))?;
    let analyzer = SegmentAnalyzer::new(d.sample_rate_hz, seg_len, d.window)?;

    let ifg_path = sink.dir.join("interferogram.ifg");
    let mut writer = if write_ifg {
        let f = File::create(&ifg_path).map_err(CliError::io(&ifg_path))?;
        Some(InterferogramWriter::new(
            BufWriter::with_capacity(1 << 20, f),
            d.sample_rate_hz,
            d.duration_s,
            cfg.seed,
            n_samples as u64,
        )?)
    } else {
        None
    };
    let mut acc = SpectrumAccumulator::new();
    let mut pending: Vec<f64> = Vec::with_capacity(2 * seg_len);
    let blocks: Vec<usize> = (0..synth.n_blocks()).collect();
    for batch in blocks.chunks(BATCH_BLOCKS) {
        let samples: Vec<Vec<f64>> = batch.par_iter().map(|&b| synth.block_samples(b)).collect();
        for s in samples {
            if let Some(w) = writer.as_mut() {
                w.write_samples(&s)?;
            }
            pending.extend_from_slice(&s);
            let full = pending.len() / seg_len * seg_len;
            for seg in pending[..full].chunks(seg_len) {
                acc.add(&analyzer.analyze(seg))?;
            }
            pending.drain(..full);
        }
    }
    if let Some(w) = writer {
        w.finish()?.flush().map_err(CliError::io(&ifg_path))?;
    }
    let spectrum = acc.mean()?;

    let extracted = extract_beatnotes(
        &spectrum,
        cfg.comb.delta_f_rep_hz,
        records.len() as u32,
        &ExtractOptions::default(),
    )?;
    let beats: Vec<ExtractedRow> = extracted
        .iter()
        .zip(&records)
        .map(|(b, r)| ExtractedRow {
            n: b.n,
            freq_hz: b.freq_hz,
            amplitude_re: b.amplitude.re,
            amplitude_im: b.amplitude.im,
            amplitude_sigma: b.amplitude_sigma,
            noise_floor: b.noise_floor,
            model_noise_var: r.noise_var,
        })
        .collect();

    sink.csv("spectrum.csv", |buf| Ok(write_spectrum_csv(buf, &spectrum)?))?;
    write_records(sink, "beatnotes.csv", &records)?;
    sink.rows("extracted.csv", &beats)?;
    let interferogram_bytes = if write_ifg {
        Some(std::fs::metadata(&ifg_path).map_err(CliError::io(&ifg_path))?.len())
    } else {
        None
    };
    let summary = SimulateSummary {
        scenario: cfg.scenario,
        seed: cfg.seed,
        n_samples,
        segment_len: seg_len,
        n_segments,
        interferogram: write_ifg.then(|| PathBuf::from("interferogram.ifg")),
        interferogram_bytes,
        beats,
    };
    sink.json("summary.json", &summary)?;
    Ok(summary)
}

fn write_records(sink: &Sink, name: &str, records: &[BeatnoteRecord]) -> Result<PathBuf> {
    sink.csv(name, |buf| Ok(write_beatnotes_csv(buf, records)?))
}

/// Prior cell and fit settings for `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPriors {
    pub cell: GasCell,
    #[serde(default)]
    pub free: FreeParams,
    #[serde(default)]
    pub options: FitOptions,
    /// Multiplies every line strength of the line list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength_scale: Option<f64>,
}

pub fn read_spectrum(path: &Path) -> Result<Vec<MeasuredPoint>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let f = File::open(path).map_err(CliError::io(path))?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(f)
        .deserialize()
        .collect::<std::result::Result<Vec<MeasuredPoint>, _>>()
        .map_err(csv_err)
}

/// Hash of the fit inputs: priors, spectrum and line list bytes.
fn hash_files(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(std::fs::read(p).map_err(CliError::io(*p))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Loads the inputs, fits and writes `fit.json`.
pub fn fit(spectrum: &Path, lines: &Path, priors: &Path, out_dir: PathBuf) -> Result<FitResult> {
    let text = std::fs::read_to_string(priors).map_err(CliError::io(priors))?;
    let pri: FitPriors = toml::from_str(&text).map_err(|source| CliError::Toml {
        path: priors.to_path_buf(),
        source,
    })?;
    let points = read_spectrum(spectrum)?;
    let mut list = ingest_line_list(lines)?;
    if let Some(k) = pri.strength_scale {
        list = scale_strengths(&list, k);
    }
    let result = fit_cell_params(&points, &list, &pri.cell, pri.free, &pri.options)?;
    let sink = Sink::new(out_dir, hash_files(&[priors, spectrum, lines])?)?;
    sink.json("fit.json", &result)?;
    Ok(result)
}

/// Precision-vs-averages comparison of the two arms.
pub fn speedup(cfg: &RunConfig, sink: &Sink) -> Result<SpeedupResult> {
    cfg.validate()?;
    let s = cfg
        .speedup
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [speedup] section".into()))?;
    let exp = cfg.experiment();
    let (e, d) = (exp.arm_records(Arm::Edcs)?, exp.arm_records(Arm::Dcs)?);
    let pc = PrecisionConfig {
        sample_rate_hz: cfg.dsp.sample_rate_hz,
        rbw_hz: cfg.dsp.rbw_hz,
        m_list: s.m_list.clone(),
        n_seeds: s.n_seeds,
        seed: cfg.seed,
        mode: s.mode,
        target_m: s.target_m,
    };
    pc.validate().map_err(CliError::at("speedup"))?;
    let r = precision_vs_averages(&e, &d, &pc)?;
    sink.json("speedup.json", &r)?;
    sink.rows("precision.csv", &r.curve)?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub sweep: UarSweepResult,
    pub robustness: Option<Vec<RobustnessRow>>,
}

/// Flat-top UAR sweep, plus the absorption robustness table when configured.
pub fn uar_sweep_cmd(cfg: &RunConfig, sink: &Sink) -> Result<SweepOutput> {
    cfg.validate()?;
    let s = cfg
        .uar_sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [uar_sweep] section".into()))?;
    let imp = s.detection.unwrap_or(cfg.detection);
    let sweep = uar_sweep(s.squeeze_db, s.antisqueeze_db, &s.uar_values, &s.depths_db, &imp)
        .map_err(CliError::at("uar_sweep"))?;
    sink.rows("uar_sweep.csv", &sweep.points)?;
    let robustness = match &cfg.robustness {
        Some(r) => {
            let rows = absorption_robustness(
                &cfg.experiment(),
                &RobustnessConfig {
                    uar: r.uar,
                    depths_db: r.depths_db.clone(),
                    sample_rate_hz: cfg.dsp.sample_rate_hz,
                    rbw_hz: cfg.dsp.rbw_hz,
                    n_segments: r.n_segments,
                    seed: cfg.seed,
                },
            )
            .map_err(CliError::at("robustness"))?;
            sink.rows("robustness.csv", &rows)?;
            Some(rows)
        }
        None => None,
    };
    let out = SweepOutput { sweep, robustness };
    sink.json("uar_sweep.json", &out)?;
    Ok(out)
}
