use std::sync::mpsc;

use feedcap::feedback::{FeedbackRecord, FeedbackStore, StoreFilter};
use tokio::sync::oneshot;

enum Command {
    Append(FeedbackRecord, oneshot::Sender<feedcap::Result<()>>),
    Load(oneshot::Sender<feedcap::Result<Vec<FeedbackRecord>>>),
}

/// Owns the feedback store on a dedicated thread; every read and write goes
/// through its queue in arrival order.
#[derive(Debug, Clone)]
pub struct StoreWriter {
    tx: mpsc::Sender<Command>,
}

fn closed() -> feedcap::Error {
    feedcap::Error::Contract("store writer stopped".into())
}

impl StoreWriter {
    pub fn spawn(store: FeedbackStore) -> Self {
        let (tx, rx) = mpsc::channel::<Command>();
        std::thread::spawn(move || {
            for cmd in rx {
                match cmd {
                    Command::Append(r, ack) => {
                        let _ = ack.send(store.append(&r));
                    }
                    Command::Load(ack) => {
                        let _ = ack.send(store.load(StoreFilter::default()));
                    }
                }
            }
        });
        Self { tx }
    }

    pub async fn append(&self, record: FeedbackRecord) -> feedcap::Result<()> {
        let (ack, done) = oneshot::channel();
        self.tx.send(Command::Append(record, ack)).map_err(|_| closed())?;
        done.await.map_err(|_| closed())?
    }

    pub async fn load(&self) -> feedcap::Result<Vec<FeedbackRecord>> {
        let (ack, done) = oneshot::channel();
        self.tx.send(Command::Load(ack)).map_err(|_| closed())?;
        done.await.map_err(|_| closed())?
    }
}
