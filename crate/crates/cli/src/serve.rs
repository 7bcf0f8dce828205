use std::io::Write;
use std::path::{Component, Path, PathBuf};

use anyhow::{anyhow, Result};
use log::{debug, info};
use tiny_http::{Header, Method, Response, Server};

/// Status, content type and body for one request.
pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "dzi" | "xml" => "application/xml",
        "png" => "image/png",
        "jpeg" | "jpg" => "image/jpeg",
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
}

fn text(status: u16, msg: &str) -> Reply {
    Reply {
        status,
        content_type: "text/plain; charset=utf-8",
        body: msg.as_bytes().to_vec(),
    }
}

/// Maps a request path below `root`, refusing anything that climbs out.
fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let mut out = root.to_path_buf();
    for part in Path::new(path.trim_start_matches('/')).components() {
        match part {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}

pub fn handle(root: &Path, method: &Method, url: &str) -> Reply {
    if *method != Method::Get {
        return text(405, "only GET is supported");
    }
    if url.contains('%') {
        return text(400, "encoded paths are not supported");
    }
    let Some(path) = resolve(root, url) else {
        return text(403, "forbidden");
    };
    match std::fs::read(&path) {
        Ok(body) => Reply {
            status: 200,
            content_type: content_type(&path),
            body,
        },
        Err(_) => text(404, "not found"),
    }
}

/// Serves `root` until `max_requests` have been answered (forever if None).
pub fn serve(root: &Path, addr: &str, max_requests: Option<usize>) -> Result<()> {
    let server = Server::http(addr).map_err(|e| anyhow!("cannot listen on {addr}: {e}"))?;
    let local = server.server_addr().to_ip().ok_or_else(|| anyhow!("not an IP listener"))?;
    info!("serving {} on http://{local}/", root.display());
    println!("listening on http://{local}/");
    std::io::stdout().flush()?;
    let mut served = 0;
    for req in server.incoming_requests() {
        let reply = handle(root, req.method(), req.url());
        debug!("{} {} -> {}", req.method(), req.url(), reply.status);
        let header = Header::from_bytes("Content-Type", reply.content_type).expect("static header");
        let cors = Header::from_bytes("Access-Control-Allow-Origin", "*").expect("static header");
        let resp = Response::from_data(reply.body)
            .with_status_code(reply.status)
            .with_header(header)
            .with_header(cors);
        if let Err(e) = req.respond(resp) {
            debug!("client went away: {e}");
        }
        served += 1;
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_stay_under_root() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("p_files/0")).unwrap();
        std::fs::write(dir.path().join("p.dzi"), "<Image/>").unwrap();
        std::fs::write(dir.path().join("p_files/0/0_0.png"), [1, 2, 3]).unwrap();
        let r = handle(dir.path(), &Method::Get, "/p.dzi?x=1");
        assert_eq!((r.status, r.content_type), (200, "application/xml"));
        assert_eq!(handle(dir.path(), &Method::Get, "/p_files/0/0_0.png").body, vec![1, 2, 3]);
        assert_eq!(handle(dir.path(), &Method::Get, "/../etc/passwd").status, 403);
        assert_eq!(handle(dir.path(), &Method::Get, "/%2e%2e/x").status, 400);
        assert_eq!(handle(dir.path(), &Method::Get, "/nope.png").status, 404);
        assert_eq!(handle(dir.path(), &Method::Post, "/p.dzi").status, 405);
        assert_eq!(handle(dir.path(), &Method::Head, "/p.dzi").status, 405);
    }
}
