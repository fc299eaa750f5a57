//! External executables as black-box filters.
//!
//! Wire protocol: the input image is written to the child's stdin as binary
//! PGM (P5, maxval 255); the child must write a PGM of identical dimensions to
//! stdout and exit with status zero. One child is spawned per `apply`.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::BlackBoxFilter;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{decode_pgm, encode_pgm};

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

pub struct ExternalFilter {
    cmd: String,
    timeout: Duration,
    // Calls on one instance are serialized.
    serial: Mutex<()>,
}

impl ExternalFilter {
    /// `cmd` is run through `sh -c`.
    pub fn new(cmd: impl Into<String>) -> Self {
        Self {
            cmd: cmd.into(),
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            serial: Mutex::new(()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command(&self) -> &str {
        &self.cmd
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::ExternalFilter {
            cmd: self.cmd.clone(),
            reason: reason.into(),
        }
    }

    fn run(&self, img: &Image) -> Result<Image> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| self.fail(format!("spawn failed: {e}")))?;

        let payload = encode_pgm(img);
        let mut stdin = child.stdin.take().expect("stdin piped");
        // A child that exits early closes the pipe; that surfaces below as a
        // bad exit status or malformed output, so the write error is ignored.
        let writer = thread::spawn(move || {
            let _ = stdin.write_all(&payload);
        });
        let mut stdout = child.stdout.take().expect("stdout piped");
        let out_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });
        let mut stderr = child.stderr.take().expect("stderr piped");
        let err_reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            String::from_utf8_lossy(&buf).into_owned()
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(self.fail(format!("timed out after {:?}", self.timeout)));
                }
                Ok(None) => thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(self.fail(format!("wait failed: {e}"))),
            }
        };
        let _ = writer.join();
        let stdout = out_reader
            .join()
            .expect("stdout reader panicked")
            .map_err(|e| self.fail(format!("reading stdout: {e}")))?;
        let stderr = err_reader.join().expect("stderr reader panicked");

        if !status.success() {
            return Err(self.fail(format!("exited with {status}; stderr: {}", stderr.trim())));
        }
        let out = decode_pgm(&stdout).map_err(|e| self.fail(format!("bad output: {e}")))?;
        if !out.same_shape(img) {
            return Err(self.fail(format!(
                "output is {}x{}, input was {}x{}",
                out.width(),
                out.height(),
                img.width(),
                img.height()
            )));
        }
        Ok(out)
    }
}

impl BlackBoxFilter for ExternalFilter {
    fn apply(&self, img: &Image) -> Result<Image> {
        let _guard = self.serial.lock().unwrap_or_else(|p| p.into_inner());
        self.run(img)
    }

    fn label(&self) -> String {
        format!("extern({})", self.cmd)
    }
}
