use std::path::Path;
use std::process::Command;

#[test]
fn header_declares_the_exports() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mgtad.h")).unwrap();
    for name in [
        "mgtad_version",
        "mgtad_last_error",
        "mgtad_status_string",
        "mgtad_infer_config_default",
        "mgtad_model_load",
        "mgtad_model_load_bytes",
        "mgtad_model_free",
        "mgtad_detect",
        "mgtad_stream_new",
        "mgtad_stream_push",
        "mgtad_stream_finish",
        "mgtad_stream_drain",
        "mgtad_stream_free",
        "typedef struct MgtadModel MgtadModel;",
        "MGTAD_STATUS_BUFFER_TOO_SMALL = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mgtad.h");
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
