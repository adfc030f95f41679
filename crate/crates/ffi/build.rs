use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let header = crate_dir.join("include").join("hcsmap.h");
    std::fs::create_dir_all(header.parent().unwrap()).ok();
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(&header);
        }
        // Parse errors surface when the crate itself fails to compile; let
        // rustc report those instead of failing the build script.
        Err(e @ cbindgen::Error::ParseSyntaxError { .. }) => {
            eprintln!("cbindgen parse error: {e:?}");
        }
        Err(e) => panic!("cbindgen: {e:?}"),
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
