use std::io::Write;

use treemil::data::{load_dataset, parse_dataset, write_dataset, PropagationTree, Vocabulary, EMPTY, PAD, UNK};
use treemil::Error;

const RECORD: &str = r#"{"claim_id":"c1","veracity":"F","nodes":[{"id":"p0","parent":null,"text":"He has resigned","stance":null},{"id":"p1","parent":0,"text":"No he has not","stance":"D"},{"id":"p2","parent":0,"text":"wow","stance":"C"}]}"#;

fn trees() -> Vec<PropagationTree> {
    parse_dataset(RECORD.as_bytes()).unwrap()
}

#[test]
fn tokenizer_examples() {
    let v: Vocabulary = Vocabulary::build(&trees(), 5, 1);
    let ids = v.tokenize("No he has not");
    assert_eq!(ids.len(), 4);
    assert!(ids.iter().all(|&i| i != UNK && i != EMPTY));
    assert_eq!(v.tokenize(""), vec![EMPTY]);
    assert_eq!(v.tokenize("?!"), vec![EMPTY]);
    assert_eq!(v.tokenize("zzzunseen"), vec![UNK]);
    assert_eq!(v.tokenize("NO, he!"), v.tokenize("no he"));
}

#[test]
fn embedding_rows_match_single_lookups() {
    let v: Vocabulary = Vocabulary::build(&trees(), 100, 3);
    let ids = v.tokenize("he has resigned");
    assert_eq!(ids.len(), 3);
    let m = v.embed(&ids).unwrap();
    assert_eq!(m.shape(), &[3, 100]);
    for (r, &id) in ids.iter().enumerate() {
        let single = v.embed(&[id]).unwrap();
        assert_eq!(m.row(r), single.data());
        assert_eq!(m.row(r), v.embeddings().row(id));
    }
    assert!(v.embed(&[PAD]).unwrap().data().iter().all(|&x| x == 0.0));
    assert!(matches!(v.embed(&[v.len()]), Err(Error::Index { .. })));
}

#[test]
fn vocabulary_is_seeded() {
    let a: Vocabulary = Vocabulary::build(&trees(), 4, 9);
    let b: Vocabulary = Vocabulary::build(&trees(), 4, 9);
    let c: Vocabulary = Vocabulary::build(&trees(), 4, 10);
    assert_eq!(a.embeddings(), b.embeddings());
    assert_ne!(a.embeddings(), c.embeddings());
    assert!(a.embeddings().data().iter().all(|x| x.abs() <= 0.1));
}

#[test]
fn external_embeddings_replace_known_rows() {
    let dir = std::env::temp_dir().join(format!("treemil-emb-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("emb.txt");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "3 2").unwrap();
    writeln!(f, "he 0.5 -0.25").unwrap();
    writeln!(f, "unknownword 1 1").unwrap();
    writeln!(f, "wow 2 3").unwrap();
    drop(f);
    let mut v: Vocabulary = Vocabulary::build(&trees(), 2, 1);
    assert_eq!(v.load_embeddings(&path).unwrap(), 2);
    assert_eq!(v.embed(&[v.id("he").unwrap()]).unwrap().data(), &[0.5, -0.25]);
    assert_eq!(v.embed(&[v.id("wow").unwrap()]).unwrap().data(), &[2.0, 3.0]);

    let bad = dir.join("bad.txt");
    std::fs::write(&bad, "1 3\nhe 1 2 3\n").unwrap();
    assert!(matches!(v.load_embeddings(&bad), Err(Error::Parse { line: 1, .. })));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn files_roundtrip_byte_identical() {
    let dir = std::env::temp_dir().join(format!("treemil-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let a = dir.join("a.jsonl");
    let b = dir.join("b.jsonl");
    std::fs::write(&a, format!("{RECORD}\n")).unwrap();
    write_dataset(&b, &load_dataset(&a).unwrap()).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(trees()[0].parents(), vec![None, Some(0), Some(0)]);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn structural_errors_name_the_claim() {
    let forward = RECORD.replace(r#""parent":0,"text":"wow""#, r#""parent":5,"text":"wow""#);
    match parse_dataset(forward.as_bytes()) {
        Err(Error::Structure { claim_id, .. }) => assert_eq!(claim_id, "c1"),
        other => panic!("{other:?}"),
    }
    let broken = format!("{RECORD}\n{{not json");
    assert!(matches!(parse_dataset(broken.as_bytes()), Err(Error::Parse { line: 2, .. })));
}
