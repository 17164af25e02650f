use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use socket2::{Domain, Protocol, Socket, Type};

use super::service::{MockRequest, MockService};
use super::{BugConfig, MockError};

/// A running mock service. Requests are handled one at a time on a single
/// thread, so responses depend only on request order. Dropping the handle
/// stops the server.
pub struct MockServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    service: Arc<Mutex<MockService>>,
    worker: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Direct access to the service state, e.g. to read coverage without HTTP.
    pub fn service(&self) -> Arc<Mutex<MockService>> {
        Arc::clone(&self.service)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn split_url(url: &str) -> (String, BTreeMap<String, String>) {
    match url.split_once('?') {
        Some((path, query)) => (
            path.to_string(),
            url::form_urlencoded::parse(query.as_bytes()).into_owned().collect(),
        ),
        None => (url.to_string(), BTreeMap::new()),
    }
}

/// Responses larger than tiny_http's write buffer go out in several writes;
/// with Nagle on, each one stalls on the client's delayed ACK (~40 ms).
/// Accepted sockets inherit TCP_NODELAY from the listener.
fn nodelay_listener(port: u16) -> std::io::Result<TcpListener> {
    let socket = Socket::new(Domain::IPV4, Type::STREAM, Some(Protocol::TCP))?;
    socket.set_nodelay(true)?;
    socket.set_reuse_address(true)?;
    socket.bind(&SocketAddr::from(([127, 0, 0, 1], port)).into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

/// Binds `127.0.0.1:<port>` (0 picks a free port) and starts serving.
pub fn serve(port: u16, bugs: BugConfig) -> Result<MockServer, MockError> {
    let bind_failed = |reason: String| MockError::BindFailed { port, reason };
    let server = nodelay_listener(port)
        .map_err(|e| bind_failed(e.to_string()))
        .and_then(|l| tiny_http::Server::from_listener(l, None).map_err(|e| bind_failed(e.to_string())))?;
    let addr = server.server_addr().to_ip().ok_or_else(|| MockError::BindFailed {
        port,
        reason: "not an IP listener".into(),
    })?;
    let server = Arc::new(server);
    let service = Arc::new(Mutex::new(MockService::new(bugs)));

    let worker = {
        let server = Arc::clone(&server);
        let service = Arc::clone(&service);
        std::thread::Builder::new()
            .name("mock-target".into())
            .spawn(move || {
                for mut request in server.incoming_requests() {
                    let (path, query) = split_url(request.url());
                    let mut body = Vec::new();
                    let _ = request.as_reader().read_to_end(&mut body);
                    let req = MockRequest {
                        method: request.method().as_str().to_string(),
                        path,
                        query,
                        body,
                    };
                    let resp = service.lock().expect("mock service poisoned").handle(&req);
                    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                        .expect("static header");
                    let out = tiny_http::Response::from_string(resp.body)
                        .with_status_code(resp.status)
                        .with_header(header);
                    let _ = request.respond(out);
                }
            })
            .expect("spawn mock server thread")
    };

    Ok(MockServer {
        addr,
        server,
        service,
        worker: Some(worker),
    })
}
