use onetfwi_core::npy::*;
use onetfwi_core::Error;

fn header_bytes(dict: &str) -> Vec<u8> {
    let mut h = dict.to_string();
    while (10 + h.len() + 1) % 64 != 0 {
        h.push(' ');
    }
    h.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(h.len() as u16).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    out
}

#[test]
fn zeros_and_round_trip_are_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.npy");
    write_npy(&p, &[2, 3], &[0.0; 6]).unwrap();
    let t = read_npy(&p).unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert!(t.data().iter().all(|v| v.to_bits() == 0));

    let data = vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.0e38, -7.25, f32::EPSILON];
    write_npy(&p, &[3, 2], &data).unwrap();
    let first = std::fs::read(&p).unwrap();
    let t = read_npy(&p).unwrap();
    assert!(t.data().iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
    write_npy(&p, t.shape(), t.data()).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}

#[test]
fn numpy_written_header_parses() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("np.npy");
    let mut bytes = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }");
    bytes.extend_from_slice(&1.0f32.to_le_bytes());
    bytes.extend_from_slice(&2.0f32.to_le_bytes());
    std::fs::write(&p, bytes).unwrap();
    assert_eq!(read_npy(&p).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn oversized_arrays_need_a_raised_budget() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.npy");
    std::fs::write(&p, header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (500, 5, 1000, 70), }")).unwrap();
    let h = read_npy_header(&p).unwrap();
    assert_eq!(h.len(), 175_000_000);
    let err = read_npy(&p).unwrap_err().to_string();
    assert!(err.contains("budget"), "{err}");
    // With the budget raised the (missing) body is the next complaint.
    let err = read_npy_with_budget(&p, usize::MAX).unwrap_err().to_string();
    assert!(err.contains("data bytes"), "{err}");
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.npy");
    let cases: Vec<(Vec<u8>, &str)> = vec![
        (b"NOTNUMPY\x01\x00\x00\x00".to_vec(), "magic"),
        (header_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }"), "dtype"),
        (header_bytes("{'descr': '<f4', 'fortran_order': True, 'shape': (1,), }"), "Fortran"),
        (header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (3,), }"), "data bytes"),
    ];
    for (bytes, needle) in cases {
        std::fs::write(&p, bytes).unwrap();
        match read_npy(&p) {
            Err(e @ Error::Npy(_)) => assert!(e.to_string().contains(needle), "{e} lacks {needle}"),
            other => panic!("expected an npy error for {needle}, got {other:?}"),
        }
    }
}

#[test]
fn row_reads_match_full_reads() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rows.npy");
    let data: Vec<f32> = (0..4 * 3 * 2).map(|v| v as f32).collect();
    write_npy(&p, &[4, 3, 2], &data).unwrap();
    let rows = read_npy_rows(&p, 1, 2).unwrap();
    assert_eq!(rows.shape(), &[2, 3, 2]);
    assert_eq!(rows.data(), &data[6..18]);
    assert!(read_npy_rows(&p, 3, 2).is_err());
}

#[test]
fn shape_mismatch_on_write_is_an_error_and_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.npy");
    assert!(write_npy(&p, &[2, 2], &[1.0; 3]).is_err());
    assert!(!p.exists());
}
