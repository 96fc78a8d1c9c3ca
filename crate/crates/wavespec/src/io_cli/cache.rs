//! Content-addressed store for expensive numerical payloads.
//!
//! A key is the SHA-256 of everything the payload depends on (kind, code
//! version, grid dimensions, parameters and the raw bytes of the surface), so
//! distinct inputs cannot share an entry. An entry file holds a magic tag, the
//! key, a creation time, the payload as little-endian `f64` and a SHA-256 of
//! all preceding bytes; a truncated or corrupted file is detected, logged and
//! rebuilt. Entries are written to a private temporary file and renamed into
//! place, so readers never observe a partial entry and concurrent writers of
//! one key leave a single complete file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Result, WaveError};

const MAGIC: &[u8; 8] = b"WAVESPC1";
const KEY_LEN: usize = 32;
const HEADER_LEN: usize = MAGIC.len() + KEY_LEN + 8 + 8;

/// Version string mixed into every key and written into output metadata.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 content key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; KEY_LEN]);

impl CacheKey {
    pub fn builder(kind: &str) -> KeyBuilder {
        KeyBuilder::new(kind)
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

/// Hashes named, length-prefixed fields, so no two field sequences collide
/// by concatenation.
pub struct KeyBuilder {
    hasher: Sha256,
}

impl KeyBuilder {
    fn new(kind: &str) -> Self {
        let mut b = Self { hasher: Sha256::new() };
        b.bytes("kind", kind.as_bytes());
        b.bytes("code_version", CODE_VERSION.as_bytes());
        b
    }

    pub fn bytes(&mut self, name: &str, value: &[u8]) -> &mut Self {
        for part in [name.as_bytes(), value] {
            self.hasher.update((part.len() as u64).to_le_bytes());
            self.hasher.update(part);
        }
        self
    }

    pub fn usize(&mut self, name: &str, value: usize) -> &mut Self {
        self.bytes(name, &(value as u64).to_le_bytes())
    }

    /// Exact bit pattern of `value`.
    pub fn f64(&mut self, name: &str, value: f64) -> &mut Self {
        self.bytes(name, &value.to_bits().to_le_bytes())
    }

    pub fn f64s(&mut self, name: &str, values: &[f64]) -> &mut Self {
        self.bytes(name, &encode_f64s(values))
    }

    pub fn finish(&mut self) -> CacheKey {
        CacheKey(self.hasher.clone().finalize().into())
    }
}

/// How [`Cache::get_or_build`] obtained its payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// An unreadable entry was found and replaced.
    Rebuilt,
}

/// Directory of cache entries.
#[derive(Clone, Debug)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .map_err(|e| WaveError::Cache(format!("cannot create cache directory {}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.bin", key.hex()))
    }

    /// Stored payload, `Ok(None)` on a miss and `Err(Cache)` for a damaged
    /// entry or an entry stored under another key.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<f64>>> {
        let path = self.path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        decode_entry(key, &bytes).map(Some).map_err(|why| WaveError::Cache(format!("{}: {why}", path.display())))
    }

    pub fn put(&self, key: &CacheKey, payload: &[f64]) -> Result<()> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let entry = encode_entry(key, created, payload);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            key.hex(),
            std::process::id(),
            COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &entry)?;
        fs::rename(&tmp, self.path(key)).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        Ok(())
    }

    /// Cached payload, or `builder()` stored under `key`. Damaged entries
    /// are logged and rebuilt; I/O failures are returned.
    pub fn get_or_build(
        &self,
        key: &CacheKey,
        builder: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, CacheStatus)> {
        let status = match self.get(key) {
            Ok(Some(payload)) => return Ok((payload, CacheStatus::Hit)),
            Ok(None) => CacheStatus::Miss,
            Err(WaveError::Cache(why)) => {
                log::warn!("discarding damaged cache entry {why}; rebuilding");
                CacheStatus::Rebuilt
            }
            Err(e) => return Err(e),
        };
        let payload = builder()?;
        self.put(key, &payload)?;
        Ok((payload, status))
    }
}

fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn encode_entry(key: &CacheKey, created: u64, payload: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * payload.len() + KEY_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&key.0);
    out.extend_from_slice(&created.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&encode_f64s(payload));
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn decode_entry(key: &CacheKey, bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < HEADER_LEN + KEY_LEN {
        return Err(format!("entry truncated to {} bytes", bytes.len()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - KEY_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err("unknown entry format".into());
    }
    if body[MAGIC.len()..MAGIC.len() + KEY_LEN] != key.0 {
        return Err("entry belongs to a different key".into());
    }
    let len_at = HEADER_LEN - 8;
    let len = u64::from_le_bytes(body[len_at..HEADER_LEN].try_into().expect("8 bytes")) as usize;
    let data = &body[HEADER_LEN..];
    if data.len() != 8 * len {
        return Err(format!("payload holds {} bytes, header says {len} values", data.len()));
    }
    Ok(data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(nx: usize) -> CacheKey {
        CacheKey::builder("test").usize("nx", nx).f64s("eta", &[0.5, -1e-300]).finish()
    }

    #[test]
    fn miss_then_hit_returns_identical_bits() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let payload = vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, f64::MAX];
        let (a, s1) = cache.get_or_build(&key(8), || Ok(payload.clone())).unwrap();
        let (b, s2) = cache.get_or_build(&key(8), || panic!("must not rebuild")).unwrap();
        assert_eq!((s1, s2), (CacheStatus::Miss, CacheStatus::Hit));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&payload));
        assert_eq!(bits(&b), bits(&payload));
    }

    #[test]
    fn keys_separate_dimensions_and_fields() {
        assert_ne!(key(8), key(16));
        let a = CacheKey::builder("k").bytes("ab", b"c").finish();
        let b = CacheKey::builder("k").bytes("a", b"bc").finish();
        assert_ne!(a, b);
        assert_ne!(CacheKey::builder("k").f64("x", 0.0).finish(), CacheKey::builder("k").f64("x", -0.0).finish());
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put(&key(8), &[1.0]).unwrap();
        cache.put(&key(16), &[2.0]).unwrap();
        assert_eq!(cache.get(&key(8)).unwrap(), Some(vec![1.0]));
        assert_eq!(cache.get(&key(16)).unwrap(), Some(vec![2.0]));
    }

    #[test]
    fn corrupted_entry_is_rebuilt_and_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put(&key(8), &[1.0, 2.0, 3.0]).unwrap();
        let path = cache.path(&key(8));
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(cache.get(&key(8)), Err(WaveError::Cache(_))));
        let (v, status) = cache.get_or_build(&key(8), || Ok(vec![4.0])).unwrap();
        assert_eq!((v, status), (vec![4.0], CacheStatus::Rebuilt));
        assert_eq!(cache.get(&key(8)).unwrap(), Some(vec![4.0]));

        fs::write(&path, b"short").unwrap();
        assert_eq!(cache.get_or_build(&key(8), || Ok(vec![5.0])).unwrap().1, CacheStatus::Rebuilt);
    }

    #[test]
    fn entry_under_a_foreign_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put(&key(8), &[1.0]).unwrap();
        fs::copy(cache.path(&key(8)), cache.path(&key(16))).unwrap();
        assert!(matches!(cache.get(&key(16)), Err(WaveError::Cache(_))));
    }

    #[test]
    fn no_temporary_files_are_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        for n in 0..4 {
            cache.put(&key(n), &[n as f64]).unwrap();
        }
        let names: Vec<String> =
            fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        assert_eq!(names.len(), 4);
        assert!(names.iter().all(|n| n.ends_with(".bin")));
    }
}
