use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use mnca_core::io::{
    load_checkpoint, parse_config, preset, save_png, ExperimentConfig, RunManifest,
};
use mnca_core::{AutomatonModel, RngStream};

/// Per-invocation state: resolved config and seed, output directory and the
/// list of written artifacts.
pub struct Context {
    pub command: String,
    pub config: Option<ExperimentConfig>,
    /// Directory that relative paths inside the config resolve against.
    pub config_dir: PathBuf,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// False when the seed was drawn from the clock.
    seed_given: bool,
    artifacts: Vec<String>,
}

fn load_config(spec: &str) -> Result<(ExperimentConfig, PathBuf)> {
    if let Some(name) = spec.strip_prefix("preset:") {
        return Ok((preset(name)?, PathBuf::from(".")));
    }
    let path = Path::new(spec);
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_config(path)?, dir))
}

impl Context {
    pub fn new(
        command: &str,
        config: Option<&str>,
        seed: Option<u64>,
        out_dir: &Path,
        needs_config: bool,
    ) -> Result<Self> {
        let (config, config_dir) = match config {
            Some(spec) => {
                let (c, d) = load_config(spec)?;
                (Some(c), d)
            }
            None if needs_config => bail!(mnca_core::Error::Config(format!(
                "{command} needs --config (a file or preset:NAME)"
            ))),
            None => (None, PathBuf::from(".")),
        };
        let given = seed.or(config.as_ref().and_then(|c| c.seed));
        let seed = match given {
            Some(s) => s,
            None => {
                let s = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(0);
                log::info!("no seed given; using {s}");
                s
            }
        };
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            command: command.to_string(),
            config,
            config_dir,
            seed,
            out_dir: out_dir.to_path_buf(),
            seed_given: given.is_some(),
            artifacts: Vec::new(),
        })
    }

    pub fn config(&self) -> Result<&ExperimentConfig> {
        self.config.as_ref().ok_or_else(|| {
            anyhow!(mnca_core::Error::Config(
                "no configuration available".into()
            ))
        })
    }

    /// Stream for one part of the pipeline. Tags keep the parts independent.
    pub fn stream(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed).fork(tag)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    /// Load a checkpoint; its stored config (and that config's seed) is used
    /// unless `--config` / `--seed` were given.
    pub fn load_model(&mut self, dir: &Path) -> Result<AutomatonModel> {
        let (model, manifest) = load_checkpoint(dir)?;
        if self.config.is_none() {
            let value = manifest.config.ok_or_else(|| {
                anyhow!(mnca_core::Error::Config(
                    "checkpoint has no config snapshot".into()
                ))
            })?;
            let cfg: ExperimentConfig = serde_json::from_value(value)
                .map_err(|e| mnca_core::Error::Config(format!("checkpoint config: {e}")))?;
            if let (false, Some(s)) = (self.seed_given, cfg.seed) {
                log::info!("using seed {s} from the checkpoint config");
                self.seed = s;
                self.seed_given = true;
            }
            self.config = Some(cfg);
        }
        Ok(model)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    pub fn write(&mut self, file: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(file);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(file.to_string());
        Ok(())
    }

    pub fn write_png<P, C>(&mut self, file: &str, img: &image::ImageBuffer<P, C>) -> Result<()>
    where
        P: image::PixelWithColorType,
        [P::Subpixel]: image::EncodableLayout,
        C: std::ops::Deref<Target = [P::Subpixel]>,
    {
        let path = self.path(file);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        save_png(img, &path)?;
        self.artifacts.push(file.to_string());
        Ok(())
    }

    /// Note files written by library helpers.
    pub fn record(&mut self, file: &str) {
        self.artifacts.push(file.to_string());
    }

    pub fn finish(self) -> Result<()> {
        let hash = self
            .config
            .as_ref()
            .map(|c| c.hash())
            .unwrap_or_else(|| "none".to_string());
        let mut manifest = RunManifest::new(&self.command, hash, self.seed);
        for a in &self.artifacts {
            manifest.record(&self.out_dir, a)?;
        }
        manifest.write(&self.out_dir)?;
        Ok(())
    }
}
