use std::fs;
use std::io::ErrorKind;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use crate::error::{Error, Result};

/// Maps the stored state, if any, to its replacement.
pub type StateUpdate<'a> = dyn FnMut(Option<&[u8]>) -> Result<Vec<u8>> + 'a;

/// Serialized policy state keyed by `(app, context)`.
///
/// `update` is an atomic read-modify-write: no other update for any key runs
/// between reading the old state and storing the new one.
pub trait ContextStateStore: Send + Sync {
    fn get(&self, app: &str, context: &str) -> Result<Option<Arc<[u8]>>>;

    fn update(&self, app: &str, context: &str, f: &mut StateUpdate) -> Result<Arc<[u8]>>;

    /// Contexts currently resident in memory.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateStoreKind {
    InMemory,
    FileBacked(PathBuf),
}

type Key = (String, String);

/// LRU map bounded by `max_contexts`; evicted contexts start over from init.
pub struct InMemoryStore {
    map: Mutex<LruCache<Key, Arc<[u8]>>>,
}

impl InMemoryStore {
    pub fn new(max_contexts: usize) -> Self {
        let cap = NonZeroUsize::new(max_contexts).unwrap_or(NonZeroUsize::MIN);
        InMemoryStore { map: Mutex::new(LruCache::new(cap)) }
    }
}

impl ContextStateStore for InMemoryStore {
    fn get(&self, app: &str, context: &str) -> Result<Option<Arc<[u8]>>> {
        Ok(self.map.lock().get(&(app.to_string(), context.to_string())).cloned())
    }

    fn update(&self, app: &str, context: &str, f: &mut StateUpdate) -> Result<Arc<[u8]>> {
        let key = (app.to_string(), context.to_string());
        let mut map = self.map.lock();
        let next: Arc<[u8]> = f(map.get(&key).map(|b| &b[..]))?.into();
        map.put(key, next.clone());
        Ok(next)
    }

    fn len(&self) -> usize {
        self.map.lock().len()
    }
}

/// One file per context under `dir`, fronted by an in-memory LRU.
pub struct FileBackedStore {
    dir: PathBuf,
    map: Mutex<LruCache<Key, Arc<[u8]>>>,
}

impl FileBackedStore {
    pub fn open(dir: impl Into<PathBuf>, max_contexts: usize) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::Store(format!("creating {}: {e}", dir.display())))?;
        let cap = NonZeroUsize::new(max_contexts).unwrap_or(NonZeroUsize::MIN);
        Ok(FileBackedStore { dir, map: Mutex::new(LruCache::new(cap)) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, app: &str, context: &str) -> PathBuf {
        self.dir.join(format!("{}.{}.state", hex(app), hex(context)))
    }

    fn load(&self, path: &Path) -> Result<Option<Arc<[u8]>>> {
        match fs::read(path) {
            Ok(b) => Ok(Some(b.into())),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::Store(format!("reading {}: {e}", path.display()))),
        }
    }
}

fn hex(s: &str) -> String {
    if s.is_empty() {
        return "_".to_string();
    }
    s.bytes().map(|b| format!("{b:02x}")).collect()
}

impl ContextStateStore for FileBackedStore {
    fn get(&self, app: &str, context: &str) -> Result<Option<Arc<[u8]>>> {
        let key = (app.to_string(), context.to_string());
        let mut map = self.map.lock();
        if let Some(b) = map.get(&key) {
            return Ok(Some(b.clone()));
        }
        let loaded = self.load(&self.path_for(app, context))?;
        if let Some(b) = &loaded {
            map.put(key, b.clone());
        }
        Ok(loaded)
    }

    fn update(&self, app: &str, context: &str, f: &mut StateUpdate) -> Result<Arc<[u8]>> {
        let key = (app.to_string(), context.to_string());
        let path = self.path_for(app, context);
        let mut map = self.map.lock();
        let current = match map.get(&key) {
            Some(b) => Some(b.clone()),
            None => self.load(&path)?,
        };
        let next: Arc<[u8]> = f(current.as_deref())?.into();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &next)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| Error::Store(format!("writing {}: {e}", path.display())))?;
        map.put(key, next.clone());
        Ok(next)
    }

    fn len(&self) -> usize {
        self.map.lock().len()
    }
}
