use std::time::Duration;

use met3r_client::{Client, ClientError};

#[tokio::test]
async fn unreachable_server_is_an_http_error() {
    // bind then drop to get a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = Client::new(format!("http://127.0.0.1:{port}")).health().await.unwrap_err();
    assert!(matches!(err, ClientError::Http(_)));
    assert_eq!(err.kind(), "http");
}

#[tokio::test]
async fn trailing_slash_is_ignored() {
    let (addr, _) = met3r_server::spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    let client = Client::new(format!("http://{addr}/")).with_poll_interval(Duration::from_millis(5));
    assert_eq!(client.base(), format!("http://{addr}"));
    assert_eq!(client.health().await.unwrap().status, "ok");
}

#[tokio::test]
async fn non_json_error_bodies_are_kept() {
    let (addr, _) = met3r_server::spawn(([127, 0, 0, 1], 0).into()).await.unwrap();
    let err = Client::new(format!("http://{addr}/no-such-route")).health().await.unwrap_err();
    match err {
        ClientError::Api { status, kind, .. } => assert_eq!((status, kind.as_str()), (404, "http")),
        other => panic!("unexpected {other}"),
    }
}
