fn main() {
    eprintln!("fraclab: under construction");
    std::process::exit(2);
}
