fn main() {
    // populated once the library surface is in place
}
