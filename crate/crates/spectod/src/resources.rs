//! Loading the registry, databases, templates and lookup tables from disk.

use std::fs;
use std::path::{Path, PathBuf};

use spectod_core::corpus::ActMap;
use spectod_core::db::DatabaseSet;
use spectod_core::delex::Placeholders;
use spectod_core::normalize::Normalizer;
use spectod_core::prompt::Templates;
use spectod_core::schema::FunctionRegistry;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("no database file for domain `{domain}` in {dir}")]
    MissingTable { domain: String, dir: PathBuf },
}

pub fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(path: &Path, message: impl ToString) -> LoadError {
    LoadError::Invalid {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

pub fn load_registry(path: Option<&Path>) -> Result<FunctionRegistry, LoadError> {
    match path {
        None => Ok(FunctionRegistry::multiwoz()),
        Some(p) => FunctionRegistry::from_json(&read(p)?).map_err(|e| invalid(p, e)),
    }
}

pub fn load_normalizer(path: Option<&Path>) -> Result<Normalizer, LoadError> {
    match path {
        None => Ok(Normalizer::default()),
        Some(p) => Normalizer::from_json(&read(p)?).map_err(|e| invalid(p, e)),
    }
}

/// Reads `ds.txt`, `dst.txt` and `rg.txt` from `dir`.
pub fn load_templates(dir: Option<&Path>) -> Result<Templates, LoadError> {
    let Some(dir) = dir else {
        return Ok(Templates::default());
    };
    let ds = read(&dir.join("ds.txt"))?;
    let dst = read(&dir.join("dst.txt"))?;
    let rg = read(&dir.join("rg.txt"))?;
    Templates::from_texts(&ds, &dst, &rg).map_err(|e| invalid(dir, e))
}

/// Loads `<domain>_db.json` for every non-null registry domain. Domains marked synthetic
/// (taxi) may lack a file; any other missing table is an error.
pub fn load_database(dir: &Path, registry: &FunctionRegistry) -> Result<DatabaseSet, LoadError> {
    let mut db = DatabaseSet::new();
    for f in registry.functions().iter().filter(|f| !f.is_null()) {
        let path = dir.join(format!("{}_db.json", f.name));
        if path.is_file() {
            db.insert_table_json(&f.name, &read(&path)?)
                .map_err(|e| invalid(&path, e))?;
        } else if !db.is_synthetic(&f.name) {
            return Err(LoadError::MissingTable {
                domain: f.name.clone(),
                dir: dir.to_path_buf(),
            });
        }
    }
    Ok(db)
}

/// Everything the pipeline, converter and evaluator read but never modify.
pub struct Resources {
    pub registry: FunctionRegistry,
    pub normalizer: Normalizer,
    pub templates: Templates,
    pub db: DatabaseSet,
    pub placeholders: Placeholders,
    pub acts: ActMap,
}

#[derive(Debug, Clone, Default)]
pub struct ResourcePaths {
    pub schema: Option<PathBuf>,
    pub normalization: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub db: PathBuf,
}

impl Resources {
    pub fn load(paths: &ResourcePaths) -> Result<Self, LoadError> {
        let registry = load_registry(paths.schema.as_deref())?;
        let db = load_database(&paths.db, &registry)?;
        Ok(Resources {
            normalizer: load_normalizer(paths.normalization.as_deref())?,
            templates: load_templates(paths.templates.as_deref())?,
            db,
            registry,
            placeholders: Placeholders::default(),
            acts: ActMap::default(),
        })
    }
}
