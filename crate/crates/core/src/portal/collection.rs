use crate::memory::FunctionDescriptor;

const DEFAULTS: [(&str, &str, &str); 20] = [
    ("Browser", "search", "Search the web"),
    ("Maps", "search", "Find places and directions"),
    ("Amazon", "search", "Shop for products"),
    ("YouTube", "search", "Find videos"),
    ("Spotify", "search", "Find music and podcasts"),
    ("Google", "search", "Web search"),
    ("Instacart", "search", "Order groceries"),
    ("DoorDash", "search", "Order food delivery"),
    ("Wikipedia", "search", "Look up encyclopedia articles"),
    ("Netflix", "search", "Find shows and movies"),
    ("Yelp", "search", "Find restaurants and reviews"),
    ("Uber", "search", "Book a ride to a destination"),
    ("Reddit", "search", "Search discussions"),
    ("TikTok", "search", "Find short videos"),
    ("Memo", "record", "Write a note"),
    ("Translate", "translate", "Translate text"),
    ("Wallet", "pay", "Pay an amount"),
    ("Calendar", "record", "Add an event"),
    ("Twitter", "share", "Post a message publicly"),
    ("Yelp", "review", "Write a review"),
];

/// The collection a new user starts with, most frequently used first.
pub fn default_collection() -> Vec<FunctionDescriptor> {
    DEFAULTS
        .iter()
        .map(|(app, action, desc)| FunctionDescriptor::new(app, action).with_description(desc))
        .collect()
}
