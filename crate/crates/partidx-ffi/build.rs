use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = PathBuf::from(env::var("OUT_DIR").unwrap()).join("partidx.h");
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("PARTIDX_H".into()),
        cpp_compat: true,
        documentation: true,
        usize_is_size_t: true,
        ..Default::default()
    };
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&out);
            // keep a copy in the tree so C callers get the header without
            // digging through target/
            let _ = std::fs::create_dir_all(crate_dir.join("include"));
            let _ = std::fs::copy(&out, crate_dir.join("include/partidx.h"));
        }
        Err(e) => println!("cargo:warning=header generation failed: {}", e),
    }
}
