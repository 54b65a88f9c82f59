use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use neused::diffusion::remote::{DenoiseRequest, DenoiseResponse};
use neused::diffusion::{Conditioning, Denoiser, DiffusionError, RemoteDenoiser};
use neused::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiny_http::{Response, Server};

/// A loopback denoiser server answering the first `requests` calls with
/// `reply(call_index, request)`, given as (status, body).
fn serve(
    requests: usize,
    reply: impl Fn(usize, DenoiseRequest) -> (u16, String) + Send + 'static,
) -> (String, JoinHandle<Vec<DenoiseRequest>>) {
    let server = Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for k in 0..requests {
            let mut req = server.recv().unwrap();
            assert_eq!(req.url(), "/v1/denoise");
            assert_eq!(*req.method(), tiny_http::Method::Post);
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let parsed: DenoiseRequest = serde_json::from_str(&body).unwrap();
            let (status, text) = reply(k, parsed.clone());
            seen.push(parsed);
            req.respond(Response::from_string(text).with_status_code(status)).unwrap();
        }
        seen
    });
    (format!("http://127.0.0.1:{port}"), handle)
}

fn json(shape: Vec<usize>, epsilon: Vec<f64>) -> String {
    serde_json::to_string(&DenoiseResponse { shape, epsilon }).unwrap()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    // Wide dynamic range so any lossy float formatting would show up.
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-12..12))).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn zero_server_gives_zero_noise() {
    let (url, h) = serve(1, |_, r| (200, json(r.shape.clone(), vec![0.0; r.x_t.len()])));
    let x = random_tensor(&[3, 2, 2], 1);
    let eps = RemoteDenoiser::new(&url, 0).predict_noise(&x, 17, &Conditioning::null(4)).unwrap();
    assert_eq!(eps.shape(), x.shape());
    assert!(eps.data().iter().all(|v| *v == 0.0));
    let seen = h.join().unwrap();
    assert_eq!(seen[0].t, 17);
    assert_eq!(seen[0].prompt, None);
    assert_eq!(seen[0].embedding, None);
}

#[test]
fn loopback_round_trip_is_bitwise() {
    let (url, h) = serve(1, |_, r| (200, json(r.shape, r.x_t)));
    let x = random_tensor(&[4, 4], 2);
    let cond = Conditioning::from_prompt("a red sphere", 8);
    let eps = RemoteDenoiser::new(&url, 0).predict_noise(&x, 500, &cond).unwrap();
    assert_eq!(eps.shape(), &[4, 4]);
    for (a, b) in eps.data().iter().zip(x.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let seen = h.join().unwrap();
    assert_eq!(seen[0].prompt.as_deref(), Some("a red sphere"));
    assert_eq!(seen[0].embedding.as_deref(), Some(cond.embedding()));
}

#[test]
fn wrong_shape_is_a_shape_error() {
    let (url, h) = serve(1, |_, _| (200, json(vec![2, 2], vec![0.0; 4])));
    let x = random_tensor(&[4, 4], 3);
    let err = RemoteDenoiser::new(&url, 0).predict_noise(&x, 5, &Conditioning::null(2)).unwrap_err();
    assert!(matches!(err, DiffusionError::DenoiserShape { ref actual, .. } if actual == &[2, 2]), "{err}");
    h.join().unwrap();
}

#[test]
fn garbage_body_is_malformed() {
    let (url, h) = serve(1, |_, _| (200, "{\"eps\": 3}".into()));
    let x = random_tensor(&[2], 4);
    let err = RemoteDenoiser::new(&url, 3).predict_noise(&x, 5, &Conditioning::null(2)).unwrap_err();
    // Malformed responses are not retried.
    assert!(matches!(err, DiffusionError::MalformedResponse(_)), "{err}");
    assert_eq!(h.join().unwrap().len(), 1);
}

#[test]
fn transient_failures_are_retried_within_budget() {
    let reply = |k: usize, r: DenoiseRequest| {
        if k < 2 {
            (503, "busy".to_string())
        } else {
            (200, json(r.shape, vec![1.5; r.x_t.len()]))
        }
    };
    let (url, h) = serve(3, reply);
    let x = random_tensor(&[2, 3], 5);
    let eps = RemoteDenoiser::new(&url, 2).predict_noise(&x, 9, &Conditioning::null(2)).unwrap();
    assert!(eps.data().iter().all(|v| *v == 1.5));
    assert_eq!(h.join().unwrap().len(), 3);

    let (url, h) = serve(2, reply);
    let err = RemoteDenoiser::new(&url, 1).predict_noise(&x, 9, &Conditioning::null(2)).unwrap_err();
    assert!(matches!(err, DiffusionError::Transport(ref m) if m.contains("503")), "{err}");
    h.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let x = random_tensor(&[2], 6);
    let err = RemoteDenoiser::new(&format!("http://127.0.0.1:{port}/"), 1)
        .predict_noise(&x, 9, &Conditioning::null(2))
        .unwrap_err();
    assert!(matches!(err, DiffusionError::Transport(_)), "{err}");
}

#[test]
fn concurrent_callers_each_get_their_answer() {
    let count = Arc::new(AtomicUsize::new(0));
    let c = count.clone();
    let (url, h) = serve(8, move |_, r| {
        c.fetch_add(1, Ordering::SeqCst);
        (200, json(r.shape, r.x_t.iter().map(|v| -v).collect()))
    });
    let denoiser = RemoteDenoiser::new(&url, 0);
    std::thread::scope(|s| {
        for seed in 0..8 {
            let denoiser = &denoiser;
            s.spawn(move || {
                let x = random_tensor(&[3], 100 + seed);
                let eps = denoiser.predict_noise(&x, 1, &Conditioning::null(2)).unwrap();
                assert!(eps.data().iter().zip(x.data()).all(|(e, v)| *e == -*v));
            });
        }
    });
    h.join().unwrap();
    assert_eq!(count.load(Ordering::SeqCst), 8);
}
