use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use selfcert::data::openml::{fetch_openml, Origin};
use selfcert::data::LabelColumn;
use selfcert::Error;

const BODY: &str = "a,b,class\n1.0,2.0,x\n3.0,4.0,y\n5.0,6.5,x\n";

/// Serves `BODY` for every request and counts the requests.
fn serve() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            while reader.read_line(&mut line).unwrap() > 0 && line != "\r\n" {
                line.clear();
            }
            counter.fetch_add(1, Ordering::SeqCst);
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: text/csv\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{BODY}",
                BODY.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/data/{{id}}.csv"), hits)
}

#[test]
fn second_fetch_comes_from_cache() {
    let (template, hits) = serve();
    let dir = tempfile::tempdir().unwrap();
    let (first, origin) = fetch_openml(44, dir.path(), &template, &LabelColumn::Last).unwrap();
    assert_eq!(origin, Origin::Network);
    assert_eq!((first.len(), first.dim(), first.class_count), (3, 2, 2));
    assert_eq!(first.name, "spambase");

    let (second, origin) = fetch_openml(44, dir.path(), &template, &LabelColumn::Last).unwrap();
    assert_eq!(origin, Origin::Cache);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    assert_eq!(first.content_hash(), second.content_hash());

    // offline: the cache alone suffices
    let (third, _) = fetch_openml(44, dir.path(), "http://127.0.0.1:9/{id}", &LabelColumn::Last).unwrap();
    assert_eq!(third.content_hash(), first.content_hash());
}

#[test]
fn tampered_cache_is_rejected() {
    let (template, _) = serve();
    let dir = tempfile::tempdir().unwrap();
    fetch_openml(7, dir.path(), &template, &LabelColumn::Last).unwrap();
    let csv = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    std::fs::write(&csv, BODY.replace("6.5", "6.6")).unwrap();
    let err = fetch_openml(7, dir.path(), &template, &LabelColumn::Last).unwrap_err();
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
}

#[test]
fn text_feature_column_is_refused() {
    let (template, _) = serve();
    let dir = tempfile::tempdir().unwrap();
    let err = fetch_openml(9, dir.path(), &template, &LabelColumn::Name("a".into())).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    let (ds, _) = fetch_openml(9, dir.path(), &template, &LabelColumn::Name("class".into())).unwrap();
    assert_eq!(ds.name, "openml-9");
    assert_eq!(ds.label_names, ["x", "y"]);
}
