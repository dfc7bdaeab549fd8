use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use bft::*;
use bft_core::assembly::{assemble_target, fuse, snet_head};
use bft_core::bank::{build_bank, sample, BankSource};
use bft_core::model::{init_net, logits, save_net, NetSpec};
use bft_core::Tensor;

fn c(s: impl AsRef<str>) -> CString {
    CString::new(s.as_ref()).unwrap()
}

fn path_c(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    let p = bft_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn input(len: usize) -> Vec<f32> {
    (0..len)
        .map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.3)
        .collect()
}

#[test]
fn bank_and_target_match_the_rust_api() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetSpec::snet(2);
    let nets: Vec<_> = (0..2).map(|s| init_net(&spec, 10 + s)).collect();
    let paths: Vec<_> = (0..2)
        .map(|i| dir.path().join(format!("src{i}.cnn")))
        .collect();
    for (p, params) in paths.iter().zip(&nets) {
        save_net(&spec, params, p).unwrap();
    }

    unsafe {
        let mut models = [ptr::null_mut::<BftModel>(); 2];
        for (m, p) in models.iter_mut().zip(&paths) {
            assert_eq!(bft_model_load(path_c(p).as_ptr(), m), BFT_OK);
        }
        let mut len = 0;
        assert_eq!(bft_model_input_len(models[0], &mut len), BFT_OK);
        assert_eq!(len, 784);
        let mut classes = 0;
        assert_eq!(bft_model_num_classes(models[0], &mut classes), BFT_OK);
        assert_eq!(classes, 2);

        let ids = [c("a"), c("b")];
        let id_ptrs: Vec<_> = ids.iter().map(|s| s.as_ptr()).collect();
        let model_ptrs: Vec<*const BftModel> = models.iter().map(|&m| m as *const _).collect();
        let mut bank = ptr::null_mut();
        assert_eq!(
            bft_bank_build(model_ptrs.as_ptr(), id_ptrs.as_ptr(), 2, 3, &mut bank),
            BFT_OK
        );
        let mut entries = 0;
        assert_eq!(bft_bank_len(bank, &mut entries), BFT_OK);
        assert_eq!(entries, 2 * spec.filters_in(3).unwrap());

        let bank_path = dir.path().join("bank.bft");
        assert_eq!(bft_bank_save(bank, path_c(&bank_path).as_ptr()), BFT_OK);
        let mut reloaded = ptr::null_mut();
        assert_eq!(
            bft_bank_load(path_c(&bank_path).as_ptr(), &mut reloaded),
            BFT_OK
        );

        let mut target = ptr::null_mut();
        assert_eq!(bft_target_assemble(reloaded, 16, 7, 2, &mut target), BFT_OK);
        let x = input(784);
        let mut out = [0f32; 2];
        let mut out_len = out.len();
        assert_eq!(
            bft_model_logits(target, x.as_ptr(), x.len(), out.as_mut_ptr(), &mut out_len),
            BFT_OK
        );
        assert_eq!(out_len, 2);

        // Same computation through the Rust API.
        let sources = [
            BankSource {
                spec: &spec,
                params: &nets[0],
                source_id: "a",
                task: "a",
            },
            BankSource {
                spec: &spec,
                params: &nets[1],
                source_id: "b",
                task: "b",
            },
        ];
        let rust_bank = build_bank(&sources, 3).unwrap();
        let prefix = fuse(&rust_bank, &sample(&rust_bank, 16, 7).unwrap()).unwrap();
        let head = snet_head(&spec, 3, 16, 2).unwrap();
        let expected = assemble_target(prefix, head, 7)
            .unwrap()
            .logits(&Tensor::new(vec![1, 28, 28], x.clone()).unwrap())
            .unwrap();
        assert_eq!(out.to_vec(), expected.data().to_vec());

        // Saved targets reload as models with identical outputs.
        let target_path = dir.path().join("target.cnn");
        assert_eq!(
            bft_model_save(target, path_c(&target_path).as_ptr()),
            BFT_OK
        );
        let mut again = ptr::null_mut();
        assert_eq!(
            bft_model_load(path_c(&target_path).as_ptr(), &mut again),
            BFT_OK
        );
        let mut out2 = [0f32; 2];
        let mut out2_len = 2;
        assert_eq!(
            bft_model_logits(again, x.as_ptr(), x.len(), out2.as_mut_ptr(), &mut out2_len),
            BFT_OK
        );
        assert_eq!(out, out2);

        // Plain networks evaluate like `model::logits`.
        let mut plain = [0f32; 2];
        let mut plain_len = 2;
        assert_eq!(
            bft_model_logits(
                models[0],
                x.as_ptr(),
                x.len(),
                plain.as_mut_ptr(),
                &mut plain_len
            ),
            BFT_OK
        );
        let direct = logits(
            &spec,
            &nets[0],
            &Tensor::new(vec![1, 28, 28], x.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(plain.to_vec(), direct.data().to_vec());

        // Targets cannot serve as bank sources.
        let mixed: [*const BftModel; 1] = [target];
        let mut none = ptr::null_mut();
        assert_eq!(
            bft_bank_build(mixed.as_ptr(), id_ptrs.as_ptr(), 1, 3, &mut none),
            BFT_ERR_KIND
        );
        assert!(none.is_null());

        for m in models {
            bft_model_free(m);
        }
        bft_model_free(target);
        bft_model_free(again);
        bft_bank_free(bank);
        bft_bank_free(reloaded);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        let missing = path_c(&dir.path().join("missing.cnn"));
        assert_eq!(bft_model_load(missing.as_ptr(), &mut m), 17);
        assert!(m.is_null());
        assert!(last_error().contains("missing.cnn"));

        let garbage = dir.path().join("garbage.bft");
        std::fs::write(&garbage, b"NOPE and some bytes").unwrap();
        let mut b = ptr::null_mut();
        assert_eq!(bft_bank_load(path_c(&garbage).as_ptr(), &mut b), 6);
        assert!(last_error().contains("magic"));

        assert_eq!(bft_model_load(ptr::null(), &mut m), BFT_ERR_NULL);
        assert_eq!(
            bft_model_load(missing.as_ptr(), ptr::null_mut()),
            BFT_ERR_NULL
        );
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(bft_model_load(bad.as_ptr().cast(), &mut m), BFT_ERR_UTF8);

        let spec = NetSpec::snet(2);
        let p = dir.path().join("n.cnn");
        save_net(&spec, &init_net(&spec, 1), &p).unwrap();
        assert_eq!(bft_model_load(path_c(&p).as_ptr(), &mut m), BFT_OK);

        let x = input(784);
        let mut small = [0f32; 1];
        let mut len = 1;
        assert_eq!(
            bft_model_logits(m, x.as_ptr(), x.len(), small.as_mut_ptr(), &mut len),
            BFT_ERR_BUFFER
        );
        assert_eq!(len, 2);
        let mut out = [0f32; 2];
        let mut len = 2;
        assert_eq!(
            bft_model_logits(m, x.as_ptr(), 10, out.as_mut_ptr(), &mut len),
            1,
            "wrong input length is a shape error"
        );

        let ids = [c("only")];
        let id_ptrs = [ids[0].as_ptr()];
        let models: [*const BftModel; 1] = [m];
        let mut bank = ptr::null_mut();
        assert_eq!(
            bft_bank_build(models.as_ptr(), id_ptrs.as_ptr(), 1, 3, &mut bank),
            BFT_OK
        );
        let mut t = ptr::null_mut();
        assert_eq!(bft_target_assemble(bank, 10_000, 0, 2, &mut t), 12);
        assert!(last_error().contains("capacity"));
        let dup: [*const BftModel; 2] = [m, m];
        let dup_ids = [ids[0].as_ptr(), ids[0].as_ptr()];
        let mut b2 = ptr::null_mut();
        assert_eq!(
            bft_bank_build(dup.as_ptr(), dup_ids.as_ptr(), 2, 3, &mut b2),
            15
        );

        bft_model_free(m);
        bft_bank_free(bank);
        bft_model_free(ptr::null_mut());
        bft_bank_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"bft.h\"\nint main(void) { BftModel *m = 0; size_t n = 0;\n\
         int32_t s = bft_model_input_len(m, &n); bft_model_free(m); return s == BFT_ERR_NULL ? 0 : 1; }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected bft.h"),
            Err(e) => panic!("{compiler} unavailable: {e}"),
        }
    }
}
