//! Framed messages over a loopback TCP connection.

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use airflux::dataflow::transport::{encode_message, TcpLink, TransportError};
use airflux::dataflow::{Control, Endpoint, Message, OperatorId, Payload, PredictInput, PredictRequest, RankId};
use airflux::learners::TrainingPair;
use airflux::stream::MiniBatch;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = thread::spawn(move || -> Result<usize, TransportError> {
        let (stream, _) = listener.accept().expect("accept");
        let mut link = TcpLink::from_stream(stream)?;
        let mut n = 0;
        while let Some(m) = link.recv()? {
            println!("received seq {} {:?} from {}", m.seq, m.payload.kind(), m.sender);
            n += 1;
        }
        Ok(n)
    });

    let me = Endpoint::new(OperatorId(0), RankId(0));
    let batch = MiniBatch {
        id: 1,
        pairs: (0..4).map(|i| TrainingPair::Skipgram { center: i, context: i + 1, label: 1 }).collect(),
        created_ts: 0,
        shard_key: 1u64.to_le_bytes().to_vec(),
    };
    let request = PredictRequest { request_id: 9, input: PredictInput::Features(vec![0.5, -1.0]), reply_to: Some(me) };
    let msgs = vec![
        Message::new(me, 1, Payload::MiniBatch(Arc::new(batch))),
        Message::new(me, 2, Payload::PredictRequest(request)),
        Message::new(me, 3, Payload::Control(Control::EndOfStream)),
    ];
    let mut link = TcpLink::connect(addr)?;
    for m in &msgs {
        println!("frame of {} bytes", encode_message(m)?.len());
        link.send(m)?;
    }
    drop(link);
    let n = server.join().expect("server thread")?;
    println!("{n} message(s) round-tripped");
    Ok(())
}
