use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::thread;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relaynet::env::{run_episode, EpisodeConfig, EpisodeEnv, OracleController, RelayObservation, N_ACTIONS};
use relaynet::feeder::build_feeder_section;
use relaynet::server::{decode, encode, EnvClient, EnvInfo, EnvServer, Session, WireMessage, PROTOCOL_VERSION};

fn session() -> Session {
    Session::new(build_feeder_section(), EpisodeConfig::default()).unwrap()
}

fn hello() -> WireMessage {
    WireMessage::Hello {
        version: PROTOCOL_VERSION,
        info: None,
    }
}

fn spawn_server() -> (
    std::net::SocketAddr,
    relaynet::server::ShutdownHandle,
    thread::JoinHandle<()>,
) {
    let server = EnvServer::bind("127.0.0.1:0", build_feeder_section(), EpisodeConfig::default()).unwrap();
    let addr = server.local_addr().unwrap();
    let handle = server.shutdown_handle();
    let join = thread::spawn(move || server.serve().unwrap());
    (addr, handle, join)
}

#[test]
fn hello_reports_the_environment_shape() {
    let mut s = session();
    let reply = s.handle(hello());
    assert_eq!(
        reply,
        WireMessage::Hello {
            version: PROTOCOL_VERSION,
            info: Some(EnvInfo {
                relays: 5,
                state_dim: 22,
                window: 10,
            }),
        }
    );
}

#[test]
fn version_mismatch_errors_and_closes() {
    let mut s = session();
    let reply = s.handle(WireMessage::Hello {
        version: 99,
        info: None,
    });
    assert!(matches!(reply, WireMessage::Error { .. }));
    assert!(s.is_closed());
}

#[test]
fn requests_before_hello_are_refused() {
    let mut s = session();
    assert!(matches!(
        s.handle(WireMessage::Reset { seed: 1 }),
        WireMessage::Error { .. }
    ));
    assert!(!s.is_closed());
}

#[test]
fn step_contract_errors_keep_the_session() {
    let mut s = session();
    s.handle(hello());
    let before = s.handle(WireMessage::Step { actions: vec![0; 5] });
    assert!(matches!(before, WireMessage::Error { .. }), "step before reset");
    assert!(matches!(
        s.handle(WireMessage::Reset { seed: 3 }),
        WireMessage::Obs { step: 0, .. }
    ));
    let arity = s.handle(WireMessage::Step { actions: vec![0; 4] });
    match arity {
        WireMessage::Error { message } => assert!(message.contains("expected 5 actions"), "{message}"),
        other => panic!("{other:?}"),
    }
    let bad_index = s.handle(WireMessage::Step {
        actions: vec![0, 0, N_ACTIONS, 0, 0],
    });
    assert!(matches!(bad_index, WireMessage::Error { .. }));
    assert!(matches!(
        s.handle(WireMessage::Step { actions: vec![0; 5] }),
        WireMessage::Obs { step: 1, .. }
    ));
    assert!(matches!(s.handle_line(b"obs step=1\n"), WireMessage::Error { .. }));
    assert!(matches!(s.handle_line(b"jump high=1\n"), WireMessage::Error { .. }));
    assert!(!s.is_closed());
}

#[test]
fn error_text_with_line_breaks_stays_on_one_line() {
    let msg = WireMessage::error("first line\nsecond\r\tthird \\ end");
    let line = encode(&msg);
    assert_eq!(line.matches('\n').count(), 1);
    assert!(line.ends_with('\n'));
    assert_eq!(decode(line.as_bytes()).unwrap(), msg);
}

#[test]
fn decode_errors_name_the_offset() {
    let err = decode(b"step actions=1,2,x,4\n").unwrap_err();
    assert_eq!(err.to_string(), "decode error at offset 17: bad element in `actions`");
    let err = decode(b"reset seed=1 seed=2\n").unwrap_err();
    assert!(err.to_string().contains("offset 13"), "{err}");
    let err = decode(b"reset\xff seed=1\n").unwrap_err();
    assert!(err.to_string().contains("offset 5"), "{err}");
}

#[test]
fn floats_round_trip_bit_exactly() {
    let values = [
        0.1,
        -0.0,
        f64::MIN_POSITIVE,
        5e-324,
        f64::MAX,
        1.0 / 3.0,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NAN,
    ];
    let msg = WireMessage::Obs {
        step: 7,
        observations: vec![RelayObservation {
            voltage_window: values.to_vec(),
            current_window: values.iter().rev().copied().collect(),
            breaker_closed: true,
            counter: 9,
        }],
        rewards: values.to_vec(),
        done: true,
    };
    let WireMessage::Obs {
        observations, rewards, ..
    } = decode(encode(&msg).as_bytes()).unwrap()
    else {
        panic!("kind changed");
    };
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&rewards), bits(&values));
    assert_eq!(bits(&observations[0].voltage_window), bits(&values));
}

fn arb_observation(window: usize) -> impl Strategy<Value = RelayObservation> {
    (
        prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), window),
        prop::collection::vec(-1e3f64..1e3, window),
        any::<bool>(),
        0u8..=9,
    )
        .prop_map(|(v, i, c, k)| RelayObservation {
            voltage_window: v,
            current_window: i,
            breaker_closed: c,
            counter: k,
        })
}

fn arb_message() -> impl Strategy<Value = WireMessage> {
    prop_oneof![
        (any::<u32>(), prop::option::of((0usize..100, 0usize..1000, 1usize..50))).prop_map(|(version, info)| {
            WireMessage::Hello {
                version,
                info: info.map(|(relays, state_dim, window)| EnvInfo {
                    relays,
                    state_dim,
                    window,
                }),
            }
        }),
        any::<u64>().prop_map(|seed| WireMessage::Reset { seed }),
        prop::collection::vec(0usize..N_ACTIONS, 0..8).prop_map(|actions| WireMessage::Step { actions }),
        Just(WireMessage::Close),
        (1usize..6)
            .prop_flat_map(|w| {
                (
                    any::<usize>(),
                    prop::collection::vec(arb_observation(w), 0..6),
                    prop::collection::vec(-1e4f64..1e4, 0..6),
                    any::<bool>(),
                )
            })
            .prop_map(|(step, observations, rewards, done)| WireMessage::Obs {
                step,
                observations,
                rewards,
                done,
            }),
        any::<String>().prop_map(|message| WireMessage::Error { message }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn codec_round_trip(msg in arb_message()) {
        let line = encode(&msg);
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert_eq!(decode(line.as_bytes()).unwrap(), msg);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
    }
}

#[test]
fn remote_episode_matches_in_process_trace() {
    let (addr, shutdown, join) = spawn_server();
    let topo = build_feeder_section();
    let mut env = EpisodeEnv::new(topo, EpisodeConfig::default()).unwrap();
    let mut client = EnvClient::connect(addr).unwrap();
    for seed in 0..3u64 {
        env.reset(seed).unwrap();
        let trace = run_episode(&mut env, &mut OracleController).unwrap();
        assert_eq!(client.reset(seed).unwrap().len(), 5);
        for s in &trace.steps {
            let (obs, rewards, done) = client.step(&s.actions).unwrap();
            let measured: Vec<(f64, f64)> = obs
                .iter()
                .map(|o| (*o.voltage_window.last().unwrap(), *o.current_window.last().unwrap()))
                .collect();
            assert_eq!(measured, s.measurements);
            assert_eq!(rewards, s.rewards);
            assert_eq!(done, s.step + 1 == trace.steps.len());
        }
    }
    client.close().unwrap();
    shutdown.shutdown();
    join.join().unwrap();
}

#[test]
fn garbage_lines_do_not_break_the_server() {
    let (addr, shutdown, join) = spawn_server();
    let stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut response = String::new();
    for _ in 0..500 {
        let len = rng.random_range(0..80);
        let mut line: Vec<u8> = (0..len).map(|_| rng.random::<u8>()).filter(|b| *b != b'\n').collect();
        line.push(b'\n');
        writer.write_all(&line).unwrap();
        response.clear();
        reader.read_line(&mut response).unwrap();
        assert!(
            response.starts_with("error ") || response.starts_with("hello "),
            "{response}"
        );
    }
    drop(writer);
    drop(reader);
    let mut client = EnvClient::connect(addr).unwrap();
    assert_eq!(client.reset(1).unwrap().len(), 5);
    client.close().unwrap();
    shutdown.shutdown();
    join.join().unwrap();
}

#[test]
fn second_client_waits_for_the_first() {
    let (addr, shutdown, join) = spawn_server();
    let mut first = EnvClient::connect(addr).unwrap();
    let second = thread::spawn(move || {
        let mut c = EnvClient::connect(addr).unwrap();
        c.reset(2).unwrap();
        c.close().unwrap();
    });
    thread::sleep(std::time::Duration::from_millis(200));
    assert!(!second.is_finished());
    first.reset(1).unwrap();
    first.close().unwrap();
    second.join().unwrap();
    shutdown.shutdown();
    join.join().unwrap();
}

#[test]
fn shutdown_notifies_the_client() {
    let (addr, shutdown, join) = spawn_server();
    let stream = TcpStream::connect(addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    writer.write_all(encode(&hello()).as_bytes()).unwrap();
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    shutdown.shutdown();
    line.clear();
    reader.read_line(&mut line).unwrap();
    assert_eq!(line, "close\n");
    join.join().unwrap();
}
