use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

const CAMERA_PROMISE: &str = "cam.example.net-camera.json.p0";

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mud").join(name);
    fs::read_to_string(p).unwrap()
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(state: &Path, port: u16) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_mudscope"))
            .args(["serve", "--port", &port.to_string(), "--state-dir"])
            .arg(state)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("mudscope listening on ").expect("banner").to_string();
        Server { child, base }
    }

    fn port(&self) -> u16 {
        self.base.rsplit(':').next().unwrap().parse().unwrap()
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn stop(mut self) {
        #[cfg(unix)]
        {
            Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().unwrap();
            let status = self.child.wait().unwrap();
            assert_eq!(status.code(), Some(0));
        }
        #[cfg(not(unix))]
        {
            self.child.kill().unwrap();
            self.child.wait().unwrap();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn upload(client: &Client, server: &Server, name: &str) -> reqwest::blocking::Response {
    client.post(server.url("/api/mudfiles")).body(fixture(name)).send().unwrap()
}

#[test]
fn upload_graph_and_etag() {
    let state = tempfile::tempdir().unwrap();
    let server = Server::start(state.path(), 0);
    let client = Client::new();

    let res = upload(&client, &server, "minimal.json");
    assert_eq!(res.status(), StatusCode::CREATED);
    let body: Value = res.json().unwrap();
    assert_eq!(body["version"], 2);

    let res = client.get(server.url("/api/graph")).send().unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let tag = res.headers()["etag"].to_str().unwrap().to_string();
    let graph: Value = res.json().unwrap();
    let ids: Vec<&str> = graph["nodes"].as_array().unwrap().iter().map(|n| n["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["device:srv.example.com-minimal.json", "host:srv.example.com"]);

    let res = client.get(server.url("/api/graph")).header("If-None-Match", &tag).send().unwrap();
    assert_eq!(res.status(), StatusCode::NOT_MODIFIED);

    assert_eq!(upload(&client, &server, "camera.json").status(), StatusCode::CREATED);
    let res = client.get(server.url("/api/graph")).header("If-None-Match", &tag).send().unwrap();
    assert_eq!(res.status(), StatusCode::OK);

    let dup = upload(&client, &server, "camera.json");
    assert_eq!(dup.status(), StatusCode::CONFLICT);
    let err: Value = dup.json().unwrap();
    assert_eq!(err["code"], "DuplicateProfile");
    server.stop();
}

#[test]
fn invalid_upload_is_rejected() {
    let state = tempfile::tempdir().unwrap();
    let server = Server::start(state.path(), 0);
    let client = Client::new();
    let res = client.post(server.url("/api/mudfiles")).body("{}").send().unwrap();
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let err: Value = res.json().unwrap();
    assert_eq!(err["code"], "ValidationFailed");
    assert!(err["report"]["items"].as_array().unwrap().iter().any(|i| i["code"] == "MissingMudContainer"));
    server.stop();
}

#[test]
fn promise_fulfilment_survives_restart() {
    let state = tempfile::tempdir().unwrap();
    let client = Client::new();
    let server = Server::start(state.path(), 0);
    assert_eq!(upload(&client, &server, "camera.json").status(), StatusCode::CREATED);

    let promises: Value = client.get(server.url("/api/promises")).send().unwrap().json().unwrap();
    assert_eq!(promises[0]["id"], CAMERA_PROMISE);
    assert_eq!(promises[0]["status"], "pending");

    let url = server.url(&format!("/api/promises/{CAMERA_PROMISE}"));
    let res = client.put(&url).json(&json!({"hosts": []})).send().unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    assert_eq!(res.json::<Value>().unwrap()["code"], "EmptyHostList");

    let res = client.put(&url).body("not json").send().unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    assert_eq!(res.json::<Value>().unwrap()["code"], "MalformedBody");

    let res = client.put(&url).json(&json!({"hosts": [{"name": "nvr", "kind": "controller-class"}]})).send().unwrap();
    assert_eq!(res.status(), StatusCode::OK);

    let res = client.put(&url).json(&json!({"hosts": ["other"]})).send().unwrap();
    assert_eq!(res.status(), StatusCode::CONFLICT);

    let res = client.put(server.url("/api/promises/nope.p9")).json(&json!({"hosts": ["x"]})).send().unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);

    let before: Value = client.get(server.url("/api/graph")).send().unwrap().json().unwrap();
    server.stop();

    let server = Server::start(state.path(), 0);
    let after: Value = client.get(server.url("/api/graph")).send().unwrap().json().unwrap();
    assert_eq!(before, after);
    let promise = after["promises"].as_array().unwrap().iter().find(|p| p["id"] == CAMERA_PROMISE).unwrap().clone();
    assert_eq!(promise["status"], "fulfilled");
    assert_eq!(promise["hosts"], json!(["controller:nvr"]));
    server.stop();
}

#[test]
fn flows_report_and_delete() {
    let state = tempfile::tempdir().unwrap();
    let server = Server::start(state.path(), 0);
    let client = Client::new();
    for name in ["pair-dev1.json", "pair-dev2.json", "cooker.json"] {
        assert_eq!(upload(&client, &server, name).status(), StatusCode::CREATED);
    }
    let nodes: Vec<String> = client.get(server.url("/api/graph")).send().unwrap().json::<Value>().unwrap()["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["id"].as_str().unwrap().to_string())
        .filter(|id| id.contains("-dev"))
        .collect();
    assert_eq!(nodes.len(), 2);

    let res = client.get(server.url("/api/flows")).query(&[("src", &nodes[0]), ("dst", &nodes[1])]).send().unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let flow: Value = res.json().unwrap();
    assert_eq!(flow["stacks"].as_array().unwrap().len(), 3);

    let res = client.get(server.url("/api/flows")).query(&[("src", &nodes[0])]).send().unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    assert_eq!(res.json::<Value>().unwrap()["code"], "MissingParameter");

    let res = client.get(server.url("/api/flows")).query(&[("src", "device:ghost"), ("dst", &nodes[1])]).send().unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);

    let report: Value = client.get(server.url("/api/report")).send().unwrap().json().unwrap();
    assert_eq!(report[0]["ace"], "redundant");

    let id = nodes[1].strip_prefix("device:").unwrap();
    let res = client.delete(server.url(&format!("/api/mudfiles/{id}"))).send().unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let res = client.delete(server.url(&format!("/api/mudfiles/{id}"))).send().unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);
    assert_eq!(res.json::<Value>().unwrap()["code"], "UnknownDevice");

    let graph: Value = client.get(server.url("/api/graph")).send().unwrap().json().unwrap();
    assert!(graph["links"].as_array().unwrap().iter().all(|l| l["source"] != nodes[1] && l["target"] != nodes[1]));
    assert!(!state.path().join(format!("profiles/{id}.json")).exists());

    let res = client.get(server.url("/api/nothing")).send().unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);
    assert_eq!(res.json::<Value>().unwrap()["code"], "NotFound");
    server.stop();
}

#[test]
fn non_local_upload_persists() {
    let state = tempfile::tempdir().unwrap();
    let client = Client::new();
    let server = Server::start(state.path(), 0);
    client.post(server.url("/api/mudfiles?local=false")).body(fixture("pair-dev1.json")).send().unwrap();
    upload(&client, &server, "pair-dev2.json");
    let graph: Value = client.get(server.url("/api/graph")).send().unwrap().json().unwrap();
    assert_eq!(graph["links"].as_array().unwrap().len(), 0);
    server.stop();

    let server = Server::start(state.path(), 0);
    let graph: Value = client.get(server.url("/api/graph")).send().unwrap().json().unwrap();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), 2);
    assert_eq!(graph["links"].as_array().unwrap().len(), 0);
    server.stop();
}

#[test]
fn second_instance_on_same_port_exits_4() {
    let state = tempfile::tempdir().unwrap();
    let server = Server::start(state.path(), 0);
    let other = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mudscope"))
        .args(["serve", "--port", &server.port().to_string(), "--state-dir"])
        .arg(other.path())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
    server.stop();
}
