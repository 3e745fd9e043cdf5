use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::{EvalArgs, Failure, GenDataArgs, GradCheckArgs, InferArgs, TrainArgs};
use crate::data::{generate_dataset, load_dataset, pgm, Dataset, ImageSample, Split};
use crate::error::{Error, Result};
use crate::metrics::{boundary, evaluate_dataset, OracleSegmenter, Segmentation, Segmenter};
use crate::model::{build_model, load_checkpoint, save_checkpoint, train_with_progress, ModelParams, Variant};
use crate::nn::{grad_check_suite, LayerSpec};
use crate::refine::{refine_iterate, segment_once, ModelSegmenter};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen_data(config: RunConfig, a: GenDataArgs) -> Result<(), Failure> {
    config.data.validate()?;
    let seed = a.seed.unwrap_or(config.seed);
    let (manifest, path) = generate_dataset(&config.data, seed, &a.out)?;
    let width = manifest.domains.iter().map(String::len).max().unwrap_or(0).max(6);
    println!("{:<width$}  {:>6}  {:>6}", "domain", "train", "test");
    for (d, name) in manifest.domains.iter().enumerate() {
        let count = |split| {
            manifest
                .entries
                .iter()
                .filter(|e| e.domain == d && e.split == split)
                .count()
        };
        println!("{name:<width$}  {:>6}  {:>6}", count(Split::Train), count(Split::Test));
    }
    println!("manifest: {}", path.display());
    Ok(())
}

/// The samples of one domain, relabelled as domain 0.
fn single_domain(ds: &Dataset, split: Split, domain: usize) -> Result<Vec<ImageSample>> {
    if domain >= ds.num_domains() {
        return Err(Error::Index {
            what: "domain id",
            index: domain,
            limit: ds.num_domains(),
        });
    }
    let mut s = ds.domain(split, domain);
    s.iter_mut().for_each(|s| s.domain = 0);
    Ok(s)
}

pub fn train(config: RunConfig, a: TrainArgs) -> Result<(), Failure> {
    config.validate()?;
    let ds = load_dataset(&a.data)?;
    let (samples, num_domains, names) = match (a.variant, a.domain) {
        (Variant::Sd, None) => return Err(Failure::Usage("--variant sd needs --domain".into())),
        (Variant::Sd, Some(d)) => (
            single_domain(&ds, Split::Train, d)?,
            1,
            vec![(d, ds.domain_names[d].clone())],
        ),
        (_, Some(_)) => return Err(Failure::Usage("--domain applies only to --variant sd".into())),
        (_, None) => (
            ds.train.clone(),
            ds.num_domains(),
            ds.domain_names.iter().cloned().enumerate().collect(),
        ),
    };
    let tc = &config.train;
    let samples = if a.crops {
        let mut rng = ChaCha8Rng::seed_from_u64(tc.rng_seed);
        config
            .crops
            .sample_dataset(&samples, config.crops_per_image, &mut rng)?
    } else {
        samples
    };
    let params = build_model(a.variant, num_domains, config.arch, tc.working_resolution, tc.rng_seed)?;
    eprintln!(
        "training {} on {} images ({} parameters)",
        a.variant.label(),
        samples.len(),
        params.param_count()
    );
    let mut csv = String::from("epoch,domain,name,mean_fidelity,images\n");
    let (params, _) = train_with_progress(params, &samples, tc, |e| {
        let mut line = format!("epoch {:>3}", e.epoch);
        for d in &e.per_domain {
            let (id, name) = &names[d.domain];
            let _ = writeln!(csv, "{},{id},{name},{},{}", e.epoch, d.mean_fidelity, d.images);
            let _ = write!(line, "  {name} {:.2}", d.mean_fidelity);
        }
        eprintln!("{line}");
    })?;
    save_checkpoint(&params, &a.out)?;
    let stats = a.stats.unwrap_or_else(|| a.out.with_extension("csv"));
    write_file(&stats, csv)?;
    println!("checkpoint: {}", a.out.display());
    println!("stats: {}", stats.display());
    Ok(())
}

/// Routes every sample to a fixed head, so reports can index a filtered
/// domain from 0.
struct Routed<'a> {
    inner: &'a dyn Segmenter,
    domain: usize,
}

impl Segmenter for Routed<'_> {
    fn segment(&self, sample: &ImageSample) -> Result<Segmentation> {
        if sample.domain == self.domain {
            return self.inner.segment(sample);
        }
        let routed = ImageSample {
            domain: self.domain,
            ..sample.clone()
        };
        self.inner.segment(&routed)
    }
}

fn load_refiner(path: Option<&Path>) -> Result<Option<ModelParams>> {
    path.map(load_checkpoint).transpose()
}

pub fn eval(config: RunConfig, a: EvalArgs) -> Result<(), Failure> {
    config.refine.validate()?;
    let ds = load_dataset(&a.data)?;
    let params = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let refiner = load_refiner(a.refine_checkpoint.as_deref())?;
    if let Some(p) = &params {
        match p.variant {
            Variant::Sd if a.domain.is_none() => {
                return Err(Failure::Usage("an SD checkpoint needs --domain".into()));
            }
            Variant::Md | Variant::Ml if p.num_domains != ds.num_domains() => {
                return Err(Error::Config(format!(
                    "checkpoint covers {} domains, dataset has {}",
                    p.num_domains,
                    ds.num_domains()
                ))
                .into());
            }
            _ => {}
        }
    }
    let (samples, names, route) = match a.domain {
        Some(d) => {
            let route = match params.as_ref().map(|p| p.variant) {
                Some(Variant::Sd) => 0,
                _ => d,
            };
            (
                single_domain(&ds, a.split, d)?,
                vec![ds.domain_names[d].clone()],
                Some(route),
            )
        }
        None => (ds.split(a.split).to_vec(), ds.domain_names.clone(), None),
    };
    let model;
    let segmenter: &dyn Segmenter = match &params {
        None => &OracleSegmenter,
        Some(p) => {
            model = ModelSegmenter {
                params: p,
                refiner: refiner.as_ref(),
                config: &config.refine,
                refine: a.refine,
            };
            &model
        }
    };
    let routed;
    let segmenter: &dyn Segmenter = match route {
        Some(domain) => {
            routed = Routed {
                inner: segmenter,
                domain,
            };
            &routed
        }
        None => segmenter,
    };
    let (report, images) = evaluate_dataset(segmenter, &samples, &names, a.refine)?;
    print!("{report}");
    if a.refine {
        let max = images.iter().map(|i| i.iterations).max().unwrap_or(0);
        let mean = images.iter().map(|i| i.iterations).sum::<usize>() as f64 / images.len().max(1) as f64;
        println!("refinement iterations: mean {mean:.2}, max {max}");
    }
    if let Some(prefix) = &a.report {
        write_file(&with_suffix(prefix, ".txt"), report.to_string())?;
        write_file(&with_suffix(prefix, ".json"), report.to_json())?;
    }
    Ok(())
}

pub fn infer(config: RunConfig, a: InferArgs) -> Result<(), Failure> {
    config.refine.validate()?;
    let t = Instant::now();
    let params = load_checkpoint(&a.checkpoint)?;
    let refiner = load_refiner(a.refine_checkpoint.as_deref())?;
    let load_time = t.elapsed();

    let t = Instant::now();
    let source = pgm::Pgm::read(&a.image)?;
    let image = source.to_image();
    let read_time = t.elapsed();

    let route = if params.variant == Variant::Sd { 0 } else { a.domain };
    let t = Instant::now();
    let result = if a.refine {
        refine_iterate(&params, refiner.as_ref(), route, &image, &config.refine)?
    } else {
        segment_once(&params, route, &image, &config.refine)?
    };
    let segment_time = t.elapsed();

    let t = Instant::now();
    pgm::write_mask(&a.out, &result.final_mask)?;
    if let Some(path) = &a.overlay {
        let mut over = pgm::Pgm::from_image(&image)?;
        for (p, &b) in over.pixels.iter_mut().zip(boundary(&result.final_mask).data()) {
            if b != 0 {
                *p = 255;
            }
        }
        over.write(path)?;
    }
    let write_time = t.elapsed();

    println!("iterations: {}", result.iterations);
    if !result.dice_trace.is_empty() {
        let trace: Vec<String> = result.dice_trace.iter().map(|d| format!("{d:.4}")).collect();
        println!("dice trace: {}", trace.join(" "));
    }
    println!(
        "objects: {}  foreground px: {}",
        result.objects.len(),
        result.final_mask.area()
    );
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    println!(
        "time ms: load {:.1}  read {:.1}  segment {:.1}  write {:.1}",
        ms(load_time),
        ms(read_time),
        ms(segment_time),
        ms(write_time)
    );
    Ok(())
}

pub fn grad_check(config: RunConfig, a: GradCheckArgs) -> Result<(), Failure> {
    if a.seeds == 0 || a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(Failure::Usage("need --seeds >= 1 and --tolerance >= 0".into()));
    }
    let arch = a.arch.unwrap_or(config.arch);
    let specs: Vec<LayerSpec> = arch.trunk().into_iter().chain(arch.head(2)).collect();
    let reports = grad_check_suite(&specs, a.seed, a.seeds, a.tolerance)?;
    for r in &reports {
        println!("{r}");
    }
    let failing: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| {
            format!(
                "{:?} {}->{} (seed {})",
                r.layer.kind, r.layer.in_channels, r.layer.out_channels, r.seed
            )
        })
        .collect();
    if failing.is_empty() {
        println!("all {} checks passed at tolerance {:e}", reports.len(), a.tolerance);
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "{} of {} checks failed: {}",
            failing.len(),
            reports.len(),
            failing.join(", ")
        )))
    }
}
