use lipvae::core::train::Provenance;
use lipvae::idx::{dataset_from_idx, parse_images, parse_labels, IdxError, IMAGE_MAGIC, LABEL_MAGIC};

fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out
}

fn two_images() -> Vec<u8> {
    let mut b = header(IMAGE_MAGIC, &[2, 2, 2]);
    b.extend_from_slice(&[0, 255, 255, 0, 255, 255, 0, 0]);
    b
}

#[test]
fn parses_pixels_into_unit_interval() {
    let mut labels = header(LABEL_MAGIC, &[2]);
    labels.extend_from_slice(&[3, 7]);
    let ds = dataset_from_idx(&two_images(), Some(&labels), Provenance::Mnist).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.image(0), &[0.0, 1.0, 1.0, 0.0]);
    assert_eq!(ds.image(1), &[1.0, 1.0, 0.0, 0.0]);
    assert_eq!(ds.labels().unwrap(), &[3, 7]);
    assert_eq!(ds.side(), Some(2));
}

#[test]
fn header_fields_are_big_endian() {
    let b = two_images();
    let (n, rows, cols, px) = parse_images(&b).unwrap();
    assert_eq!((n, rows, cols, px.len()), (2, 2, 2, 8));
}

#[test]
fn wrong_magic_is_rejected() {
    let mut b = two_images();
    b[3] = 0x04;
    match parse_images(&b) {
        Err(IdxError::BadMagic { expected, found }) => assert_eq!((expected, found), (2051, 2052)),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_labels(&b), Err(IdxError::BadMagic { .. })));
}

#[test]
fn truncated_pixels_are_rejected() {
    let b = two_images();
    assert!(matches!(
        parse_images(&b[..b.len() - 1]),
        Err(IdxError::Truncated { .. })
    ));
    assert!(matches!(parse_images(&b[..6]), Err(IdxError::Truncated { .. })));
}

#[test]
fn label_count_must_match() {
    let mut labels = header(LABEL_MAGIC, &[3]);
    labels.extend_from_slice(&[1, 2, 3]);
    assert!(matches!(
        dataset_from_idx(&two_images(), Some(&labels), Provenance::Mnist),
        Err(IdxError::DimensionMismatch(_))
    ));
}
