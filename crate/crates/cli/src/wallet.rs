//! Pseudonyms on disk: `<dir>/pseudonyms/<label>.key` holds the seed,
//! `<label>.chain` the append-only chain.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ipv8_core::dpki::{load_or_create_key, PublicKey};
use ipv8_core::ssi::{AttributeOptions, Metadata, Pseudonym, PseudonymFile};
use ipv8_core::store::{RevocationMode, META_REVOCATION_MODE, META_REVOCATION_REGISTER};
use ipv8_core::Millis;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::seed;

pub struct Entry {
    pub label: String,
    pub file: PseudonymFile,
}

/// What `id add-attr` asks for.
#[derive(Debug, Clone)]
pub struct AttrSpec {
    pub name: String,
    pub algorithm: String,
    pub version: String,
    pub value: u64,
    pub valid_until: Option<Millis>,
    pub revocation: Vec<RevocationMode>,
    pub register: Option<String>,
}

impl AttrSpec {
    pub fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "algo": self.algorithm,
            "version": self.version,
            "value": self.value,
            "valid_until": self.valid_until,
            "revocation": self.revocation.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "register": self.register,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, CliError> {
        let s = |k: &str| v.get(k).and_then(Value::as_str).map(str::to_string);
        let revocation = v
            .get("revocation")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::parse).collect::<Result<Vec<_>, _>>())
            .transpose()
            .map_err(CliError::usage)?
            .unwrap_or_default();
        Ok(AttrSpec {
            name: s("name").ok_or_else(|| CliError::usage("missing name"))?,
            algorithm: s("algo").ok_or_else(|| CliError::usage("missing algo"))?,
            version: s("version").unwrap_or_else(|| "1".into()),
            value: v.get("value").and_then(Value::as_u64).ok_or_else(|| CliError::usage("missing value"))?,
            valid_until: v.get("valid_until").and_then(Value::as_u64),
            revocation,
            register: s("register"),
        })
    }
}

pub fn check_label(label: &str) -> Result<(), CliError> {
    let ok = !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("bad pseudonym label {label:?}")))
    }
}

fn root(dir: &Path) -> PathBuf {
    dir.join("pseudonyms")
}

fn paths(dir: &Path, label: &str) -> (PathBuf, PathBuf) {
    let r = root(dir);
    (r.join(format!("{label}.key")), r.join(format!("{label}.chain")))
}

fn open(dir: &Path, label: &str) -> Result<(Entry, Pseudonym), CliError> {
    let (key_path, chain_path) = paths(dir, label);
    let key = load_or_create_key(&key_path, seed::derived(&format!("pseudonym:{label}")))?;
    let (file, p) = PseudonymFile::open(&chain_path, key).map_err(CliError::protocol)?;
    Ok((Entry { label: label.to_string(), file }, p))
}

/// A fresh pseudonym. Fails if the label is taken.
pub fn create(dir: &Path, label: &str) -> Result<(Entry, Pseudonym), CliError> {
    check_label(label)?;
    fs::create_dir_all(root(dir))?;
    if paths(dir, label).0.exists() {
        return Err(CliError::Usage(format!("pseudonym {label:?} already exists")));
    }
    open(dir, label)
}

pub fn load(dir: &Path, label: &str) -> Result<(Entry, Pseudonym), CliError> {
    check_label(label)?;
    if !paths(dir, label).0.exists() {
        return Err(CliError::Usage(format!("no pseudonym {label:?}; run `id create` first")));
    }
    open(dir, label)
}

/// Every pseudonym under `dir`, by label.
pub fn load_all(dir: &Path) -> Result<BTreeMap<String, (Entry, Pseudonym)>, CliError> {
    let mut out = BTreeMap::new();
    let Ok(rd) = fs::read_dir(root(dir)) else {
        return Ok(out);
    };
    for e in rd {
        let path = e?.path();
        if path.extension().and_then(|x| x.to_str()) != Some("key") {
            continue;
        }
        if let Some(label) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(label.to_string(), open(dir, label)?);
        }
    }
    Ok(out)
}

/// Appends one attribute to the chain, in memory and on disk.
pub fn add_attribute(entry: &Entry, p: &mut Pseudonym, spec: &AttrSpec) -> Result<Metadata, CliError> {
    let mut extra = BTreeMap::new();
    if !spec.revocation.is_empty() {
        let modes: Vec<String> = spec.revocation.iter().map(|m| m.to_string()).collect();
        extra.insert(META_REVOCATION_MODE.to_string(), modes.join(","));
    }
    if let Some(r) = &spec.register {
        extra.insert(META_REVOCATION_REGISTER.to_string(), r.clone());
    }
    let options = AttributeOptions { valid_from: None, valid_until: spec.valid_until, extra };
    let mut rng = match seed::derived(&format!("attr:{}:{}:{}", entry.label, p.chain().len(), spec.name)) {
        Some(s) => ChaCha20Rng::from_seed(s),
        None => ChaCha20Rng::from_entropy(),
    };
    let (attr, meta) = p
        .add_attribute(&spec.name, &spec.algorithm, &spec.version, spec.value, options, &mut rng)
        .map_err(CliError::protocol)?;
    let opening = p.opening(&attr.hash()).expect("just added");
    entry.file.append_attribute(&attr, &meta, opening).map_err(CliError::protocol)?;
    Ok(meta)
}

/// The newest chain entry with this name.
pub fn find_by_name<'a>(p: &'a Pseudonym, name: &str) -> Option<&'a Metadata> {
    (0..p.chain().len()).rev().filter_map(|i| p.metadata_at(i)).find(|m| m.name == name)
}

pub fn describe(label: &str, p: &Pseudonym) -> Value {
    let attributes: Vec<Value> = (0..p.chain().len())
        .filter_map(|i| p.metadata_at(i))
        .map(|m| {
            let attesters: Vec<String> = p.attestations_for(&m.hash()).iter().map(|a| a.attester_key.to_hex()).collect();
            json!({
                "name": m.name,
                "algo": m.algorithm,
                "version": m.version,
                "metadata": hex::encode(m.hash()),
                "attesters": attesters,
            })
        })
        .collect();
    json!({"label": label, "key": p.public().to_hex(), "chain_length": p.chain().len(), "attributes": attributes})
}

pub fn parse_key(s: &str) -> Result<PublicKey, CliError> {
    PublicKey::from_hex(s).ok_or_else(|| CliError::Usage(format!("bad public key {s:?}")))
}
