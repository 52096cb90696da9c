use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use imly::audio::{encode_wav, AudioBuffer, WORKING_RATE};
use imly::recognizer::synth::{render, SynthConfig};
use imly::recognizer::PhonemeSequence;
use imly_ffi::*;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn phrase_wav() -> Vec<u8> {
    let (buf, _) = render(&PhonemeSequence::parse("N AY T R EY N").unwrap(), &SynthConfig::default(), 1);
    let mut x = buf.into_samples();
    x.extend(vec![0.0; WORKING_RATE as usize / 2]);
    encode_wav(&AudioBuffer::new(x, WORKING_RATE).unwrap())
}

fn last_error() -> String {
    let p = imly_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handle(*mut ImlyPipeline);

impl Handle {
    fn open() -> Self {
        let dir = CString::new(data_dir().to_str().unwrap()).unwrap();
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { imly_pipeline_open(dir.as_ptr(), &mut p) }, ImlyStatus::Ok);
        assert!(!p.is_null());
        Handle(p)
    }

    fn imagine(&self, wav: &[u8], config: Option<&str>) -> Result<serde_json::Value, ImlyStatus> {
        let cfg = config.map(|c| CString::new(c).unwrap());
        let mut out: *mut c_char = ptr::null_mut();
        let s = unsafe { imly_imagine_wav(self.0, wav.as_ptr(), wav.len(), cfg.as_ref().map_or(ptr::null(), |c| c.as_ptr()), &mut out) };
        take(s, out)
    }

    fn redecode(&self, sha: &str, config: &str) -> Result<serde_json::Value, ImlyStatus> {
        let sha = CString::new(sha).unwrap();
        let cfg = CString::new(config).unwrap();
        let mut out: *mut c_char = ptr::null_mut();
        let s = unsafe { imly_redecode(self.0, sha.as_ptr(), cfg.as_ptr(), &mut out) };
        take(s, out)
    }
}

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { imly_pipeline_free(self.0) }
    }
}

fn take(s: ImlyStatus, out: *mut c_char) -> Result<serde_json::Value, ImlyStatus> {
    if s != ImlyStatus::Ok {
        assert!(out.is_null());
        return Err(s);
    }
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { imly_string_free(out) };
    Ok(serde_json::from_str(&text).unwrap())
}

#[test]
fn imagine_and_redecode_through_the_abi() {
    let h = Handle::open();
    let r = h.imagine(&phrase_wav(), Some("use_separation = false\nseed = 9\n")).unwrap();
    assert_eq!(r["seed"], 9);
    assert_eq!(r["segments"][0]["candidates"][0]["text"], "night rain");
    assert!(imly_last_error_message().is_null(), "success clears the error");

    let sha = r["audio_sha256"].as_str().unwrap();
    let same = h.redecode(sha, "use_separation = false\nseed = 9\n").unwrap();
    assert_eq!(same, r);
    let other = h.redecode(sha, "use_separation = false\nlm_weight = 0\n").unwrap();
    assert_eq!(other["config"]["lm_weight"], "0");
}

#[test]
fn status_codes() {
    let h = Handle::open();
    assert_eq!(h.imagine(b"not audio", None), Err(ImlyStatus::InvalidAudio));
    assert!(last_error().contains("WAV"), "{}", last_error());
    assert_eq!(h.imagine(&phrase_wav(), Some("no_such_key = 1")), Err(ImlyStatus::InvalidConfig));
    assert!(last_error().contains("no_such_key"));
    assert_eq!(h.imagine(&phrase_wav(), Some("beam_width = 0")), Err(ImlyStatus::InvalidConfig));
    assert_eq!(h.redecode(&"0".repeat(64), ""), Err(ImlyStatus::CacheMiss));

    let bad = [0xffu8, 0xfe, 0];
    let mut out = ptr::null_mut();
    let s = unsafe { imly_imagine_wav(h.0, b"x".as_ptr(), 1, bad.as_ptr().cast(), &mut out) };
    assert_eq!(s, ImlyStatus::InvalidUtf8);
    let s = unsafe { imly_imagine_wav(ptr::null(), b"x".as_ptr(), 1, ptr::null(), &mut out) };
    assert_eq!(s, ImlyStatus::NullArgument);
    let s = unsafe { imly_imagine_wav(h.0, b"x".as_ptr(), 1, ptr::null(), ptr::null_mut()) };
    assert_eq!(s, ImlyStatus::NullArgument);
    assert_eq!(unsafe { imly_pipeline_open(ptr::null(), ptr::null_mut()) }, ImlyStatus::NullArgument);

    let empty = tempfile_dir("empty");
    let dir = CString::new(empty.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { imly_pipeline_open(dir.as_ptr(), &mut p) }, ImlyStatus::ModelError);
    assert!(p.is_null());
    std::fs::remove_dir_all(empty).unwrap();

    // freeing NULL is a no-op
    unsafe {
        imly_pipeline_free(ptr::null_mut());
        imly_string_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let h = Handle::open();
    assert_eq!(h.imagine(b"junk", None), Err(ImlyStatus::InvalidAudio));
    std::thread::spawn(|| assert!(imly_last_error_message().is_null())).join().unwrap();
    assert!(!imly_last_error_message().is_null());
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(imly_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn tempfile_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("imly-ffi-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Compiles the C smoke program against the generated header and the
/// static library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/imly.h");
    assert!(header.exists(), "header is generated by the build script");
    // the test binary lives in <target>/<profile>/deps
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libimly_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());

    let work = tempfile_dir("c");
    let exe = work.join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("C compiler available");
    assert!(status.success());

    let wav = work.join("in.wav");
    std::fs::write(&wav, phrase_wav()).unwrap();
    let out = Command::new(&exe).arg(data_dir()).arg(&wav).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 3);
    std::fs::remove_dir_all(work).ok();
}
