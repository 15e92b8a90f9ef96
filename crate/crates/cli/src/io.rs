use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};

use char2subword::model::{load_checkpoint, save_checkpoint};
use char2subword::noise::{load_layouts, NoiseConfig};
use char2subword::{Char2Subword, EmbeddingTable, Vocabulary};

use crate::config::RunConfig;
use crate::error::CliError;

fn required<'a>(path: &'a Option<PathBuf>, what: &'static str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::usage("config", format!("no {what} path given (--{what})")))
}

fn read(path: &Path, stage: &'static str) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::usage(stage, format!("{}: {e}", path.display())))
}

fn read_text(path: &Path, stage: &'static str) -> Result<String, CliError> {
    String::from_utf8(read(path, stage)?)
        .map_err(|_| CliError::usage(stage, format!("{} is not UTF-8", path.display())))
}

pub fn vocab(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    let path = required(&cfg.paths.vocab, "vocab")?;
    Vocabulary::load(&read_text(path, "vocab")?)
        .map_err(|e| CliError::usage("vocab", format!("{}: {e}", path.display())))
}

pub fn table(cfg: &RunConfig) -> Result<EmbeddingTable, CliError> {
    let path = required(&cfg.paths.table, "table")?;
    EmbeddingTable::from_bytes(&read(path, "table")?)
        .map_err(|e| CliError::usage("table", format!("{}: {e}", path.display())))
}

pub fn vocab_and_table(cfg: &RunConfig) -> Result<(Vocabulary, EmbeddingTable), CliError> {
    let v = vocab(cfg)?;
    let t = table(cfg)?;
    if v.len() != t.rows() {
        return Err(CliError::usage(
            "table",
            format!("vocabulary has {} entries but the table has {} rows", v.len(), t.rows()),
        ));
    }
    Ok((v, t))
}

pub fn corpus(cfg: &RunConfig) -> Result<String, CliError> {
    read_text(required(&cfg.paths.corpus, "corpus")?, "corpus")
}

pub fn noise(cfg: &RunConfig) -> Result<NoiseConfig, CliError> {
    let mut noise = cfg.noise();
    if let Some(path) = &cfg.paths.layouts {
        noise.layouts = load_layouts(&read_text(path, "layouts")?)
            .map_err(|e| CliError::usage("layouts", format!("{}: {e}", path.display())))?;
    }
    noise.validate().map_err(|e| CliError::usage("config", e))?;
    Ok(noise)
}

pub fn checkpoint(cfg: &RunConfig) -> Result<Option<Char2Subword>, CliError> {
    cfg.paths
        .checkpoint
        .as_deref()
        .map(|path| {
            load_checkpoint(read(path, "checkpoint")?.as_slice())
                .map_err(|e| CliError::usage("checkpoint", format!("{}: {e}", path.display())))
        })
        .transpose()
}

pub fn required_checkpoint(cfg: &RunConfig) -> Result<Char2Subword, CliError> {
    checkpoint(cfg)?.ok_or_else(|| CliError::usage("config", "no checkpoint path given (--checkpoint)"))
}

/// Advisory lock held on `<path>.lock` for as long as the guard lives, so
/// two runs never write the same artifact at once.
pub struct OutputLock {
    _file: File,
}

impl OutputLock {
    pub fn acquire(path: &Path) -> Result<Self, CliError> {
        let mut name = path.as_os_str().to_owned();
        name.push(".lock");
        let lock_path = PathBuf::from(name);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| CliError::usage("output", format!("{}: {e}", lock_path.display())))?;
        match file.try_lock() {
            Ok(()) => Ok(Self { _file: file }),
            Err(TryLockError::WouldBlock) => Err(CliError::usage(
                "output",
                format!("{} is being written by another process", path.display()),
            )),
            Err(TryLockError::Error(e)) => Err(CliError::usage("output", format!("{}: {e}", lock_path.display()))),
        }
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::usage("output", format!("{}: {e}", path.display()));
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(fail)?;
    fs::rename(&tmp, path).map_err(fail)
}

/// Report output: the `--out` file when given, stdout otherwise.
pub fn emit(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.paths.out {
        Some(path) => {
            let _lock = OutputLock::acquire(path)?;
            write_file(path, text.as_bytes())
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::usage("output", e))
        }
    }
}

pub fn checkpoint_bytes(model: &Char2Subword) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    save_checkpoint(model, &mut buf).map_err(|e| CliError::usage("checkpoint", e))?;
    Ok(buf)
}
