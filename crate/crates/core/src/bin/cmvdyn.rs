fn main() {
    eprintln!("cmvdyn: not wired up yet");
    std::process::exit(2);
}
