#![cfg(unix)]

mod common;

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use sqa_core::corruption::{corrupt, CorruptionContext, CorruptionKind, CorruptionSpec};
use sqa_core::Error;

/// A stand-in codec: copies its input argument to its output argument and
/// records the arguments it was given.
fn mock_codec(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("fake-lame");
    std::fs::write(
        &p,
        format!(
            "#!/bin/sh\necho \"$@\" >> \"{}\"\n{body}\n",
            dir.join("calls.log").display()
        ),
    )
    .unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p
}

#[test]
fn round_trip_goes_through_the_codec() {
    let dir = tempfile::tempdir().unwrap();
    let codec = mock_codec(
        dir.path(),
        "for last; do :; done\neval src=\\${$(($# - 1))}\ncp \"$src\" \"$last\"",
    );
    let ctx = CorruptionContext {
        codec_path: Some(codec),
        ..Default::default()
    };
    let clip = common::voiced_clip(0.25, 1);
    let out = corrupt(
        &clip,
        &CorruptionSpec {
            kind: CorruptionKind::Mp3,
            level: 3,
            seed: 0,
        },
        &ctx,
    )
    .unwrap();
    assert_eq!(out.len(), clip.len());
    let worst = out
        .samples
        .iter()
        .zip(&clip.samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0 / 32767.0, "16-bit round trip error {worst}");
    let calls = std::fs::read_to_string(dir.path().join("calls.log")).unwrap();
    let lines: Vec<&str> = calls.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("--quiet -b 32 "), "{}", lines[0]);
    assert!(lines[1].starts_with("--quiet --decode "), "{}", lines[1]);
}

#[test]
fn failing_or_missing_codec_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let clip = common::voiced_clip(0.1, 2);
    let spec = CorruptionSpec {
        kind: CorruptionKind::Mp3,
        level: 1,
        seed: 0,
    };
    let failing = CorruptionContext {
        codec_path: Some(mock_codec(dir.path(), "exit 3")),
        ..Default::default()
    };
    assert!(matches!(corrupt(&clip, &spec, &failing), Err(Error::Unavailable(_))));
    let missing = CorruptionContext {
        codec_path: Some(dir.path().join("absent")),
        ..Default::default()
    };
    assert!(matches!(corrupt(&clip, &spec, &missing), Err(Error::Unavailable(_))));
    assert!(matches!(
        corrupt(&clip, &spec, &CorruptionContext::default()),
        Err(Error::Unavailable(_))
    ));
}
