use parking_lot::Mutex;

use crate::memory::FunctionDescriptor;

/// Carries out a chosen function with the user's text.
pub trait ExecutionAdapter: Send + Sync {
    fn execute(&self, user_id: &str, function: &FunctionDescriptor, text: &str) -> String;
}

/// Records what would have been executed instead of doing it.
#[derive(Default)]
pub struct RecordingExecutor {
    log: Mutex<Vec<String>>,
}

impl RecordingExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> Vec<String> {
        self.log.lock().clone()
    }
}

impl ExecutionAdapter for RecordingExecutor {
    fn execute(&self, _user_id: &str, function: &FunctionDescriptor, text: &str) -> String {
        let line = format!("would execute {} with text {:?}", function.id, text);
        self.log.lock().push(line.clone());
        line
    }
}
