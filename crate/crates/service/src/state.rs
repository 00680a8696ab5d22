use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use fuselens_core::data::{load_manifest, synth_pairs, ImagePair, SyntheticSpec};
use fuselens_core::saliency::{DisplayConfig, GuidanceImage};
use fuselens_core::{Checkpoint, FusionModel, Image, ModelKind, RetainedPass};

use crate::config::Config;
use crate::ServiceError;

pub type GuidancePair = (GuidanceImage<f64>, GuidanceImage<f64>);

/// One user's view: a model, an image pair and the retained forward pass.
pub struct Session {
    pub id: String,
    pub kind: ModelKind,
    pub pair: Arc<ImagePair<f64>>,
    pub pass: RetainedPass<f64>,
    pub fused: Image<f64>,
    pub display: Mutex<DisplayConfig>,
    pub guidance: Mutex<Option<Arc<GuidancePair>>>,
    pub job: Mutex<Option<String>>,
    seq: AtomicU64,
}

impl Session {
    /// Next hover sequence number, strictly increasing from 1.
    pub fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn display(&self) -> DisplayConfig {
        *self.display.lock().unwrap()
    }

    pub fn cached_guidance(&self) -> Option<Arc<GuidancePair>> {
        self.guidance.lock().unwrap().clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JobState {
    Pending,
    Running,
    Done,
    Cancelled,
    Failed,
}

impl JobState {
    pub fn label(self) -> &'static str {
        match self {
            JobState::Pending => "pending",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Cancelled => "cancelled",
            JobState::Failed => "failed",
        }
    }

    pub fn is_reusable(self) -> bool {
        matches!(self, JobState::Pending | JobState::Running | JobState::Done)
    }
}

/// Background guidance computation for one session.
pub struct Job {
    pub id: String,
    pub session: String,
    pub total: usize,
    pub done: AtomicUsize,
    pub cancel: AtomicBool,
    pub state: Mutex<JobState>,
    pub error: Mutex<Option<String>>,
}

impl Job {
    pub fn state(&self) -> JobState {
        *self.state.lock().unwrap()
    }

    pub fn set_state(&self, s: JobState) {
        *self.state.lock().unwrap() = s;
    }

    pub fn progress(&self) -> f64 {
        self.done.load(Ordering::SeqCst) as f64 / self.total.max(1) as f64
    }
}

pub struct AppState {
    pub config: Config,
    pub pairs: Vec<Arc<ImagePair<f64>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    jobs: RwLock<HashMap<String, Arc<Job>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Loads pairs from `data_dir/manifest.txt` if present, otherwise
    /// generates the configured synthetic set.
    pub fn new(config: Config) -> Result<Self, ServiceError> {
        let manifest = config.data_dir.as_ref().map(|d| d.join("manifest.txt"));
        let pairs = match manifest {
            Some(m) if m.exists() => load_manifest(&m)?,
            _ => {
                let s = &config.synthetic;
                let spec = SyntheticSpec::new(s.resolution, s.seed);
                synth_pairs(&spec, s.count)?
            }
        };
        Ok(Self {
            config,
            pairs: pairs.into_iter().map(Arc::new).collect(),
            sessions: RwLock::default(),
            jobs: RwLock::default(),
            next_id: AtomicU64::new(1),
        })
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next_id.fetch_add(1, Ordering::SeqCst))
    }

    fn checkpoint_path(&self, kind: ModelKind) -> Option<PathBuf> {
        let dir = self.config.data_dir.as_ref()?;
        let p = dir.join(format!("{}.ckpt", kind.name()));
        p.exists().then_some(p)
    }

    /// A trained model from `data_dir/<Model>.ckpt`, else a seeded fresh one.
    pub fn model(&self, kind: ModelKind) -> Result<FusionModel<f64>, ServiceError> {
        match self.checkpoint_path(kind) {
            Some(p) => {
                let ckpt = Checkpoint::<f64>::load(&p)?;
                if ckpt.model.kind() != kind {
                    return Err(ServiceError::Config(format!(
                        "{} holds a {} model",
                        p.display(),
                        ckpt.model.kind()
                    )));
                }
                Ok(ckpt.model)
            }
            None => Ok(FusionModel::build(kind, self.config.model_seed)),
        }
    }

    pub fn pair(&self, id: &str) -> Result<Arc<ImagePair<f64>>, ServiceError> {
        self.pairs
            .iter()
            .find(|p| p.id == id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("pair {id:?}")))
    }

    pub fn create_session(&self, model: &str, pair: Option<&str>) -> Result<Arc<Session>, ServiceError> {
        let kind: ModelKind = model.parse().map_err(|_| ServiceError::BadRequest(format!("unknown model {model:?}")))?;
        let pair = match pair {
            Some(id) => self.pair(id)?,
            None => self.pairs.first().cloned().ok_or_else(|| ServiceError::NotFound("any pair".into()))?,
        };
        let model = self.model(kind)?;
        let pass = model.retain(&pair.x1, &pair.x2)?;
        let session = Arc::new(Session {
            id: self.fresh_id("s"),
            kind,
            fused: pass.fused(),
            pair,
            pass,
            display: Mutex::new(DisplayConfig::default()),
            guidance: Mutex::new(None),
            job: Mutex::new(None),
            seq: AtomicU64::new(0),
        });
        self.sessions.write().unwrap().insert(session.id.clone(), session.clone());
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id:?}")))
    }

    pub fn job(&self, id: &str) -> Result<Arc<Job>, ServiceError> {
        self.jobs
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("job {id:?}")))
    }

    /// The session's live job, or a new pending one. Returns whether the
    /// job was freshly created.
    pub fn guidance_job(&self, session: &Session) -> (Arc<Job>, bool) {
        let mut slot = session.job.lock().unwrap();
        if let Some(existing) = slot.as_ref().and_then(|id| self.job(id).ok()) {
            if existing.state().is_reusable() {
                return (existing, false);
            }
        }
        let job = Arc::new(Job {
            id: self.fresh_id("j"),
            session: session.id.clone(),
            total: session.pass.shape.n(),
            done: AtomicUsize::new(0),
            cancel: AtomicBool::new(false),
            state: Mutex::new(JobState::Pending),
            error: Mutex::new(None),
        });
        self.jobs.write().unwrap().insert(job.id.clone(), job.clone());
        *slot = Some(job.id.clone());
        (job, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> AppState {
        let mut config = Config::default();
        config.synthetic.resolution = 32;
        config.synthetic.count = 2;
        AppState::new(config).unwrap()
    }

    #[test]
    fn sessions_get_distinct_ids_and_pairs() {
        let app = state();
        let a = app.create_session("DeepFuse", None).unwrap();
        let b = app.create_session("deepfuse", Some(&app.pairs[1].id)).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(b.pair.id, app.pairs[1].id);
        assert_eq!(a.fused.height(), 32);
        assert!(Arc::ptr_eq(&app.session(&a.id).unwrap(), &a));
    }

    #[test]
    fn seq_starts_at_one_and_increases() {
        let app = state();
        let s = app.create_session("WeightedAveraging", None).unwrap();
        assert_eq!((s.next_seq(), s.next_seq()), (1, 2));
    }

    #[test]
    fn guidance_job_is_reused_until_it_fails_or_is_cancelled() {
        let app = state();
        let s = app.create_session("FunFuseAn", None).unwrap();
        let (a, fresh) = app.guidance_job(&s);
        assert!(fresh);
        let (b, fresh) = app.guidance_job(&s);
        assert!(!fresh);
        assert_eq!(a.id, b.id);
        a.set_state(JobState::Done);
        assert_eq!(app.guidance_job(&s).0.id, a.id);
        a.set_state(JobState::Cancelled);
        let (c, fresh) = app.guidance_job(&s);
        assert!(fresh);
        assert_ne!(c.id, a.id);
        assert_eq!(c.total, 32 * 32);
        assert_eq!(c.progress(), 0.0);
    }

    #[test]
    fn checkpoint_in_data_dir_replaces_fresh_model() {
        let dir = tempfile::tempdir().unwrap();
        let trained = FusionModel::<f64>::build(ModelKind::DeepFuse, 99);
        Checkpoint::new(trained.clone(), Default::default())
            .save(dir.path().join("DeepFuse.ckpt"))
            .unwrap();
        let config = Config {
            data_dir: Some(dir.path().to_path_buf()),
            ..Config::default()
        };
        let app = AppState::new(config).unwrap();
        let x = &app.pairs[0];
        let loaded = app.model(ModelKind::DeepFuse).unwrap();
        assert_eq!(
            loaded.fuse(&x.x1, &x.x2).unwrap().data(),
            trained.fuse(&x.x1, &x.x2).unwrap().data()
        );
        let fresh = app.model(ModelKind::MaskNet).unwrap();
        assert_eq!(fresh.kind(), ModelKind::MaskNet);
    }
}
