fn main() {
    println!("lamina");
}
