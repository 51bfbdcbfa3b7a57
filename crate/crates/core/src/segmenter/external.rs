//! File-exchange protocol with an external segmentation adapter.
//!
//! For each batch the driver writes `<view_id>.tensor` inputs and
//! `request.json` into a work directory, runs
//! `<adapter...> --manifest <dir>/request.json`, and expects
//! `<view_id>.logits` tensors plus `done.json` back.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{ChannelSource, RenderedView};
use crate::tensor::RawTensor;

use super::{LogitTensor, Segmenter};

pub const REQUEST_SCHEMA: &str = "pc2dseg.request/1";
pub const REQUEST_FILE: &str = "request.json";
pub const DONE_FILE: &str = "done.json";
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_TIMEOUT_SECS: u64 = 600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestView {
    pub view_id: u32,
    pub height: u32,
    pub width: u32,
    /// Input tensor file name, relative to the request directory.
    pub input: String,
    /// Logit tensor file name the adapter must write.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub schema: String,
    pub class_count: usize,
    pub channel_config: String,
    pub channels: Vec<ChannelSource>,
    pub views: Vec<RequestView>,
    pub done_file: String,
}

pub fn read_request(path: &Path) -> Result<AdapterRequest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let req: AdapterRequest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if req.schema != REQUEST_SCHEMA {
        return Err(Error::format(path, format!("unsupported request schema {:?}", req.schema)));
    }
    Ok(req)
}

/// Adapter-side helper: writes one view's logits next to the request.
pub fn write_logits(request_dir: &Path, view: &RequestView, logits: &RawTensor) -> Result<()> {
    logits.write(&request_dir.join(&view.output))
}

pub fn write_done(request_dir: &Path, request: &AdapterRequest) -> Result<()> {
    let body = serde_json::json!({ "status": "ok", "views": request.views.len() });
    let path = request_dir.join(&request.done_file);
    fs::write(&path, body.to_string()).map_err(|e| Error::io(&path, e))
}

/// Runs an external adapter command over batches of views.
#[derive(Debug)]
pub struct ExternalSegmenter {
    pub command: Vec<String>,
    pub work_dir: PathBuf,
    pub classes: usize,
    pub batch_size: usize,
    pub timeout: Duration,
    invocations: AtomicUsize,
}

impl ExternalSegmenter {
    pub fn new(command: Vec<String>, work_dir: impl Into<PathBuf>, classes: usize) -> Self {
        Self {
            command,
            work_dir: work_dir.into(),
            classes,
            batch_size: DEFAULT_BATCH_SIZE,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            invocations: AtomicUsize::new(0),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Adapter processes started so far.
    pub fn invocations(&self) -> usize {
        self.invocations.load(Ordering::SeqCst)
    }

    /// Sends all views in chunks of `batch_size`, preserving input order.
    pub fn run(&self, views: &[RenderedView]) -> Result<Vec<LogitTensor>> {
        let mut out = Vec::with_capacity(views.len());
        for chunk in views.chunks(self.batch_size.max(1)) {
            out.extend(self.run_batch(chunk)?);
        }
        Ok(out)
    }

    fn run_batch(&self, views: &[RenderedView]) -> Result<Vec<LogitTensor>> {
        let n = self.invocations.fetch_add(1, Ordering::SeqCst);
        let dir = self.work_dir.join(format!("batch_{n:05}"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

        let first = views.first().ok_or_else(|| Error::Invalid("empty adapter batch".into()))?;
        let mut entries = Vec::with_capacity(views.len());
        for v in views {
            let entry = RequestView {
                view_id: v.view_id,
                height: v.height() as u32,
                width: v.width() as u32,
                input: format!("{}.tensor", v.view_id),
                output: format!("{}.logits", v.view_id),
            };
            v.to_tensor().write(&dir.join(&entry.input))?;
            entries.push(entry);
        }
        let request = AdapterRequest {
            schema: REQUEST_SCHEMA.into(),
            class_count: self.classes,
            channel_config: first.channel_config_name.clone(),
            channels: first.channel_sources.clone(),
            views: entries,
            done_file: DONE_FILE.into(),
        };
        let request_path = dir.join(REQUEST_FILE);
        let json = serde_json::to_string_pretty(&request).expect("request serializes");
        fs::write(&request_path, json).map_err(|e| Error::io(&request_path, e))?;

        self.invoke(&dir, &request_path)?;

        let done = dir.join(DONE_FILE);
        if !done.exists() {
            return Err(Error::Adapter(format!("adapter finished without writing {}", done.display())));
        }
        request
            .views
            .iter()
            .map(|rv| {
                let path = dir.join(&rv.output);
                if !path.exists() {
                    return Err(Error::Adapter(format!("view {}: missing logits file {}", rv.view_id, path.display())));
                }
                let tensor = RawTensor::read(&path)
                    .map_err(|e| Error::Adapter(format!("view {}: {e}", rv.view_id)))?;
                LogitTensor::from_tensor(rv.view_id, tensor, self.classes, rv.height as usize, rv.width as usize)
            })
            .collect()
    }

    fn invoke(&self, dir: &Path, request_path: &Path) -> Result<()> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::Config("empty adapter command".into()))?;
        let stdout_path = dir.join("adapter.stdout.log");
        let stderr_path = dir.join("adapter.stderr.log");
        let stdout = fs::File::create(&stdout_path).map_err(|e| Error::io(&stdout_path, e))?;
        let stderr = fs::File::create(&stderr_path).map_err(|e| Error::io(&stderr_path, e))?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--manifest")
            .arg(request_path)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(|e| Error::Adapter(format!("cannot start adapter {program:?}: {e}")))?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait().map_err(|e| Error::Adapter(format!("waiting for adapter: {e}")))? {
                Some(status) => break status,
                None if start.elapsed() > self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::Adapter(format!("adapter timed out after {:?}", self.timeout)));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        if !status.success() {
            let diag = fs::read_to_string(&stderr_path).unwrap_or_default();
            let tail: String = diag.lines().rev().take(20).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
            return Err(Error::Adapter(format!("adapter exited with {status}: {tail}")));
        }
        Ok(())
    }
}

impl Segmenter for ExternalSegmenter {
    fn class_count(&self) -> usize {
        self.classes
    }

    fn infer_batch(&self, views: &[RenderedView]) -> Result<Vec<LogitTensor>> {
        self.run(views)
    }

    fn preferred_batch(&self) -> usize {
        self.batch_size
    }
}
