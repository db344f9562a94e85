fn main() {
    println!("queryforge");
}
