//! Function catalog and topic vocabularies for the synthetic stream.

pub(crate) struct CatalogEntry {
    pub app: &'static str,
    pub action: &'static str,
    pub templates: &'static [&'static str],
    pub topics: &'static [&'static [&'static str]],
}

pub(crate) const CHAT_APP: &str = "WeChat";

pub(crate) const CONTACTS: [&str; 10] = [
    "Mom", "Dad", "Alex", "Sam", "Jordan", "Taylor", "Chris", "Priya", "Wei", "Lena",
];

/// Apps that show up in contexts without being part of any collection.
pub(crate) const BACKGROUND_APPS: [&str; 4] = ["Camera", "Settings", "Photos", "Clock"];

const WEB: &[&str] = &[
    "how many ounces in a cup", "weather tomorrow", "what time is it in tokyo", "best laptop 2024",
    "how to boil an egg", "convert 5 km to miles", "is the library open today", "symptoms of flu",
    "tax filing deadline", "how to screenshot on mac", "when is daylight saving", "population of canada",
    "how tall is mount everest", "nba scores", "stock price apple", "define serendipity",
    "cheap flights to chicago", "how to unclog a drain", "python list comprehension", "movie times tonight",
    "how long to bake chicken breast", "what is a roth ira", "sunrise time", "speed of light",
    "how to tie a tie", "calories in a banana", "world cup schedule", "best running shoes",
    "how to remove coffee stains", "exchange rate euro dollar", "is it going to rain", "zip code lookup",
    "who won the oscars", "how to change a tire", "meaning of life", "wifi not working fix",
    "best pizza dough recipe", "how to get rid of hiccups", "distance to the moon", "ups tracking",
];

const PLACES: &[&str] = &[
    "central park", "airport terminal 2", "union station", "home depot", "whole foods",
    "city hall", "public library", "trader joes", "target", "costco", "walgreens", "the mall",
    "gas station", "starbucks", "post office", "dmv", "art museum", "zoo", "stadium", "beach parking",
    "farmers market", "train station", "hospital", "pharmacy", "gym", "bank of america",
    "best buy", "ikea", "apple store", "bus stop", "coffee shop", "parking garage", "hotel",
    "dentist office", "vet clinic", "car wash", "hardware store", "bakery", "bookstore", "laundromat",
];

const DESTINATIONS: &[&str] = &[
    "123 main street", "jfk airport", "downtown", "the office", "home", "grand central",
    "4th and market", "mom's house", "the gym", "convention center", "sfo terminal 3",
    "king street station", "pier 39", "union square", "the hospital", "47 oak avenue",
    "campus", "medical center", "city center", "ferry building",
];

const PRODUCTS: &[&str] = &[
    "usb c cable", "phone case", "paper towels", "running shoes", "air fryer", "desk lamp",
    "dog food", "yoga mat", "bluetooth speaker", "coffee beans", "laundry detergent",
    "wireless earbuds", "hdmi cable", "water bottle", "backpack", "printer ink", "aa batteries",
    "notebook", "phone charger", "blender", "sunscreen", "toothbrush heads", "office chair",
    "monitor stand", "kindle", "lego set", "baby wipes", "trash bags", "light bulbs", "vitamin d",
    "protein powder", "rain jacket", "socks", "shampoo", "kitchen scale", "frying pan",
    "mouse pad", "keyboard", "ssd drive", "tent",
];

const ARTISTS: &[&str] = &[
    "taylor swift", "drake", "beyonce", "the beatles", "billie eilish", "kendrick lamar",
    "coldplay", "bad bunny", "adele", "radiohead", "ed sheeran", "dua lipa", "bts",
    "fleetwood mac", "miles davis", "lofi hip hop", "the weeknd", "olivia rodrigo", "sza",
    "queen", "daft punk", "frank ocean", "arctic monkeys", "bruno mars", "rihanna",
    "imagine dragons", "nirvana", "beethoven", "hans zimmer", "tame impala",
];

const GENRES: &[&str] = &[
    "jazz", "workout playlist", "chill vibes", "classical piano", "podcast true crime",
    "90s hits", "rock classics", "sleep sounds", "focus music", "country", "kpop", "reggaeton",
    "indie folk", "house music", "road trip songs", "rainy day", "study beats", "hip hop",
];

const VIDEOS: &[&str] = &[
    "how to fix a leaky faucet", "cat videos", "minecraft tutorial", "guitar lesson",
    "yoga for beginners", "iphone review", "cooking pasta", "makeup tutorial", "nba highlights",
    "science experiments", "home workout", "tesla review", "bread baking", "drawing tutorial",
    "movie trailer", "lego build", "car repair", "unboxing", "piano tutorial", "travel vlog",
    "stand up comedy", "history documentary", "chess openings", "diy shelf", "excel tutorial",
];

const TRENDS: &[&str] = &[
    "dance challenge", "outfit ideas", "recipe hacks", "funny dogs", "skincare routine",
    "life hacks", "room tour", "gym tok", "booktok", "street food", "prank", "asmr",
    "nail art", "cleaning tips", "study with me", "travel tips", "hair tutorial", "cat memes",
    "fitness challenge", "day in my life",
];

const SHOWS: &[&str] = &[
    "stranger things", "the crown", "wednesday", "breaking bad", "the office", "squid game",
    "bridgerton", "black mirror", "ozark", "the witcher", "friends", "money heist",
    "narcos", "peaky blinders", "you", "dark", "the last of us", "succession", "seinfeld",
    "the bear", "house of the dragon", "mindhunter", "better call saul", "love is blind",
    "the queen's gambit",
];

const ACTORS: &[&str] = &[
    "tom hanks", "zendaya", "pedro pascal", "meryl streep", "keanu reeves", "margot robbie",
    "denzel washington", "timothee chalamet", "emma stone", "ryan gosling", "viola davis",
    "cillian murphy", "florence pugh", "leonardo dicaprio", "scarlett johansson",
];

const GROCERIES: &[&str] = &[
    "oat milk", "bananas", "eggs", "sourdough bread", "avocados", "chicken thighs",
    "greek yogurt", "spinach", "coffee", "olive oil", "rice", "pasta", "tomatoes", "onions",
    "cheddar cheese", "apples", "butter", "ground beef", "salmon", "strawberries", "tofu",
    "orange juice", "peanut butter", "cereal", "garlic", "lemons", "potatoes", "frozen pizza",
    "ice cream", "sparkling water",
];

const DISHES: &[&str] = &[
    "sushi", "pizza", "pad thai", "burrito", "ramen", "burger", "pho", "tacos", "curry",
    "dim sum", "fried chicken", "poke bowl", "bbq", "falafel", "dumplings", "salad",
    "bagels", "korean bbq", "wings", "pasta carbonara", "bibimbap", "shawarma", "ice cream",
    "hot pot", "brunch", "steak", "thai food", "indian food", "vegan food", "noodles",
];

const WIKI: &[&str] = &[
    "french revolution", "black holes", "roman empire", "photosynthesis", "albert einstein",
    "world war 2", "quantum computing", "ancient egypt", "the renaissance", "dna",
    "great wall of china", "climate change", "marie curie", "the cold war", "volcanoes",
    "byzantine empire", "leonardo da vinci", "the moon landing", "plate tectonics", "vikings",
    "silk road", "napoleon", "industrial revolution", "mitochondria", "the printing press",
];

const REDDIT: &[&str] = &[
    "r/cooking sourdough", "best budget headphones reddit", "r/personalfinance 401k",
    "r/buildapc first build", "r/askreddit", "r/nba trade rumors", "skincare routine reddit",
    "r/travel japan itinerary", "r/legaladvice landlord", "r/fitness beginner routine",
    "r/relationships advice", "r/gardening tomatoes", "r/movies recommendations",
    "r/homeimprovement drywall", "r/learnprogramming", "r/books fantasy", "r/running shoes",
    "r/frugal tips", "r/aww", "r/dataisbeautiful",
];

const CRAFTS: &[&str] = &[
    "living room ideas", "wedding centerpieces", "diy planters", "nail designs",
    "kitchen backsplash", "birthday cake ideas", "bedroom decor", "halloween costumes",
    "garden layout", "knitting patterns", "tattoo ideas", "bathroom remodel", "christmas crafts",
    "meal prep ideas", "small balcony", "boho decor", "hairstyles", "bookshelf styling",
];

const NEIGHBORHOODS: &[&str] = &[
    "mission district", "brooklyn heights", "capitol hill", "wicker park", "silver lake",
    "south end", "midtown", "old town", "east village", "hyde park", "the heights", "uptown",
    "riverside", "west loop", "north beach",
];

const CITIES: &[&str] = &[
    "paris", "tokyo", "new york", "lisbon", "barcelona", "chicago", "london", "seattle",
    "austin", "miami", "rome", "vancouver", "denver", "boston", "mexico city", "seoul",
    "berlin", "amsterdam", "san diego", "nashville",
];

const NOTES: &[&str] = &[
    "buy milk and eggs", "call plumber monday", "wifi password is sunshine42",
    "parking spot level 3 b12", "gift ideas for dad", "pick up dry cleaning", "book dentist",
    "passport renewal docs", "idea for the app redesign", "renew car registration",
    "pay rent on the 1st", "water the plants", "return amazon package", "meeting notes q3",
    "recipe: lemon garlic chicken", "call grandma sunday", "locker code 4471",
    "things to pack for trip", "ask about the invoice", "books to read", "movies to watch",
    "size 9 for running shoes", "cancel gym trial", "fix bike tire", "vitamins every morning",
    "birthday party supplies", "car oil change at 60k", "hotel confirmation 88213",
    "podcast recommendation", "check insurance claim",
];

const EVENTS: &[&str] = &[
    "dentist tuesday 3pm", "team standup 9am", "dinner with sam friday 7pm", "yoga class",
    "flight to chicago thursday", "mom's birthday", "parent teacher conference",
    "haircut saturday 11am", "project deadline", "soccer practice 5pm", "doctor appointment",
    "book club wednesday", "car service monday", "date night", "quarterly review 2pm",
    "piano lesson", "farmers market sunday", "call with landlord", "concert saturday 8pm",
    "vet appointment", "lunch with priya", "wedding rsvp", "gym session 6am", "tax appointment",
    "movie night", "interview 10am", "coffee with alex", "volunteer shift",
];

const FOREIGN: &[&str] = &[
    "donde esta el bano", "je voudrais un cafe", "wo ist der bahnhof", "quanto costa",
    "merci beaucoup", "ich habe hunger", "como estas", "arigatou gozaimasu", "ni hao ma",
    "onde fica o hotel", "la cuenta por favor", "excusez moi", "wie spat ist es",
    "dove si trova la stazione", "sumimasen", "kamsahamnida", "no hablo espanol",
    "ou est la gare", "ein bier bitte", "buongiorno", "xie xie", "hasta manana",
    "je ne comprends pas", "entschuldigung", "per favore", "tengo una reserva",
    "parlez vous anglais", "bon appetit", "guten morgen", "obrigado",
];

const AMOUNTS: &[&str] = &[
    "100", "25", "12.50", "40", "8.75", "60", "200", "15", "32.40", "9.99", "75", "18",
    "250", "5", "45.20", "120", "30", "64", "22.10", "500", "11", "85", "19.95", "70",
    "300", "14.25", "50", "27", "90", "1000",
];

const PAY_REASONS: &[&str] = &[
    "pizza", "rent", "concert tickets", "dinner", "uber", "groceries", "birthday gift",
    "utilities", "coffee", "drinks", "gas money", "movie tickets", "cleaning", "parking",
];

const TWEETS: &[&str] = &[
    "what a game tonight", "coffee first, then everything else", "mondays am i right",
    "just finished a great book", "this weather is unreal", "new blog post is up",
    "can't believe this season finale", "shipping the new release today",
    "best tacos in town hands down", "anyone else watching the debate",
    "sunset from the office was amazing", "hot take: pineapple belongs on pizza",
    "finally ran my first 10k", "traffic is a nightmare today", "learning rust this weekend",
    "grateful for good friends", "who's going to the conference", "the new album slaps",
    "working from the park today", "this meeting could have been an email",
    "happy friday everyone", "rainy days and jazz", "just adopted a puppy",
    "my plants are thriving", "airport wifi is a scam",
];

const REVIEWS: &[&str] = &[
    "great food, slow service", "best ramen i've had", "friendly staff and cozy vibe",
    "overpriced but tasty", "will definitely come back", "portions were huge",
    "waited 40 minutes for a table", "amazing brunch spot", "the coffee was cold",
    "hidden gem", "too loud to talk", "perfect for date night", "dessert was the highlight",
    "parking is impossible", "vegan options are great", "5 stars for the tacos",
    "meh, nothing special", "clean and fast", "rude waiter", "fantastic happy hour",
    "the patio is lovely", "fresh ingredients", "kid friendly", "wine list is excellent",
    "never again",
];

const MESSAGES: &[&str] = &[
    "on my way", "running late, be there in 10", "love you", "call me when you can",
    "did you see the game", "what time is dinner", "happy birthday", "thanks so much",
    "can you pick up milk", "miss you", "see you tomorrow", "good night", "are you home",
    "just landed", "lunch today?", "i'll call you back", "sounds good", "leaving now",
    "where are you", "let's grab coffee", "how was your day", "got it, thanks",
    "can we talk later", "don't forget the keys", "congrats!!", "feel better soon",
    "traffic is terrible", "send me the address", "ok sounds good", "be careful driving",
    "heading to the gym", "what do you want for dinner", "the kids are asleep",
    "meeting ran late", "lol", "good morning", "did you get my email", "almost there",
    "can you call mom", "haha yes", "let me know when you're free", "i'm outside",
    "bring a jacket", "so proud of you", "movie tonight?", "on the train now",
    "which restaurant?", "parking now", "call when you land", "talk soon",
];

pub(crate) const CATALOG: &[CatalogEntry] = &[
    CatalogEntry { app: "Browser", action: "search", templates: &["{}", "{} ?"], topics: &[WEB] },
    CatalogEntry { app: "Google", action: "search", templates: &["{}", "google {}"], topics: &[WEB] },
    CatalogEntry { app: "Maps", action: "search", templates: &["{}", "{} near me", "directions to {}"], topics: &[PLACES] },
    CatalogEntry { app: "Uber", action: "search", templates: &["{}", "ride to {}"], topics: &[DESTINATIONS, PLACES] },
    CatalogEntry { app: "Amazon", action: "search", templates: &["{}", "{} prime", "cheap {}"], topics: &[PRODUCTS] },
    CatalogEntry { app: "eBay", action: "search", templates: &["used {}", "{} auction", "vintage {}"], topics: &[PRODUCTS] },
    CatalogEntry { app: "YouTube", action: "search", templates: &["{}", "{} video"], topics: &[VIDEOS, ARTISTS] },
    CatalogEntry { app: "Spotify", action: "search", templates: &["{}", "{} radio", "{} mix"], topics: &[ARTISTS, GENRES] },
    CatalogEntry { app: "TikTok", action: "search", templates: &["{}", "#{}"], topics: &[TRENDS] },
    CatalogEntry { app: "Netflix", action: "search", templates: &["{}", "{} season 2", "watch {}"], topics: &[SHOWS] },
    CatalogEntry { app: "IMDb", action: "search", templates: &["{} cast", "{} rating", "{}"], topics: &[SHOWS, ACTORS] },
    CatalogEntry { app: "Instacart", action: "search", templates: &["{}", "organic {}", "{} 2 pack"], topics: &[GROCERIES] },
    CatalogEntry { app: "DoorDash", action: "search", templates: &["{}", "{} delivery", "{} near me"], topics: &[DISHES] },
    CatalogEntry { app: "Yelp", action: "search", templates: &["best {}", "{} restaurants", "{} open now"], topics: &[DISHES] },
    CatalogEntry { app: "Wikipedia", action: "search", templates: &["{}", "history of {}"], topics: &[WIKI] },
    CatalogEntry { app: "Reddit", action: "search", templates: &["{}", "{} thread"], topics: &[REDDIT] },
    CatalogEntry { app: "Pinterest", action: "search", templates: &["{}", "{} inspiration", "easy {}"], topics: &[CRAFTS] },
    CatalogEntry { app: "Zillow", action: "search", templates: &["2 bedroom {}", "houses in {}", "{} apartments"], topics: &[NEIGHBORHOODS, CITIES] },
    CatalogEntry { app: "Airbnb", action: "search", templates: &["{} weekend", "{} cabin", "stay in {}"], topics: &[CITIES] },
    CatalogEntry { app: "Expedia", action: "search", templates: &["flights to {}", "{} hotels", "{} vacation"], topics: &[CITIES] },
    CatalogEntry { app: "Weather", action: "search", templates: &["weather {}", "{} forecast", "{} temperature"], topics: &[CITIES] },
    CatalogEntry { app: "Memo", action: "record", templates: &["{}", "note: {}", "remember {}"], topics: &[NOTES] },
    CatalogEntry { app: "Calendar", action: "record", templates: &["{}", "add {}", "{} reminder"], topics: &[EVENTS] },
    CatalogEntry { app: "Translate", action: "translate", templates: &["{}", "{}?"], topics: &[FOREIGN] },
    CatalogEntry { app: "Wallet", action: "pay", templates: &["{}", "${}", "{} usd"], topics: &[AMOUNTS] },
    CatalogEntry { app: "Venmo", action: "pay", templates: &["{}", "{} dollars"], topics: &[PAY_REASONS, AMOUNTS] },
    CatalogEntry { app: "Twitter", action: "share", templates: &["{}", "{} #blessed", "{} lol"], topics: &[TWEETS] },
    CatalogEntry { app: "Yelp", action: "review", templates: &["{}", "{}!", "{}, 4 stars"], topics: &[REVIEWS] },
];

pub(crate) const CHAT_TEMPLATES: &[&str] = &["{}", "{}!", "{} :)"];
pub(crate) const CHAT_TOPICS: &[&[&str]] = &[MESSAGES];

/// Every filled-in phrase for a template set over some topics.
pub(crate) fn combos(templates: &[&str], topics: &[&[&str]]) -> Vec<String> {
    let mut out = Vec::new();
    for topic in topics {
        for w in *topic {
            for t in templates {
                out.push(t.replacen("{}", w, 1));
            }
        }
    }
    out
}
