use std::path::Path;
use std::process::Command;

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("snn_vpr.h")
}

#[test]
fn header_declares_the_abi() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct SvprEnsemble SvprEnsemble;",
        "SVPR_STATUS_OK = 0",
        "SVPR_STATUS_PANIC = 10",
        "svpr_ensemble_load(",
        "svpr_ensemble_free(",
        "svpr_ensemble_place_count(",
        "svpr_ensemble_expert_count(",
        "svpr_ensemble_hyperactive_count(",
        "svpr_ensemble_input_size(",
        "svpr_match_file(",
        "svpr_match_gray8(",
        "svpr_last_error_message(",
        "svpr_version(",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"snn_vpr.h\"\n\
         int main(void) {\n\
           SvprEnsemble *h = NULL;\n\
           size_t places[4]; uint64_t scores[4]; size_t len = 0; bool none = false;\n\
           if (svpr_ensemble_load(\"m\", &h) != SVPR_STATUS_OK) return (int)svpr_last_error_message()[0];\n\
           svpr_match_file(h, \"q.png\", 0, places, scores, 4, &len, &none);\n\
           svpr_ensemble_free(h);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
