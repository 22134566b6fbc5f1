//! A small self-contained fixture: two SQLite databases, a 30-instance
//! training corpus, two seed rationales, a 10-instance dev set and two
//! prediction files.

use std::path::{Path, PathBuf};

use crate::corpus::{write_corpus, CorpusError, Difficulty, TrainInstance};
use crate::evalharness::{EvalError, PredictionFile};
use crate::rationale::serialize_cot;
use crate::rationalizer::procedural_rationalize;
use crate::registry::DatabaseRegistry;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("building {db}: {message}")]
    Database { db: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Predictions(#[from] EvalError),
}

/// Paths of the files written by [`write_demo`].
#[derive(Debug, Clone)]
pub struct DemoLayout {
    pub root: PathBuf,
    pub registry: PathBuf,
    pub corpus: PathBuf,
    pub seeds_dir: PathBuf,
    pub dev: PathBuf,
    pub baseline_predictions: PathBuf,
    pub cot_predictions: PathBuf,
}

const COLLEGE: &str = "
CREATE TABLE prof (
  prof_id INTEGER PRIMARY KEY, -- unique id for professors
  first_name TEXT, -- the first name of the professor
  last_name TEXT, -- the last name of the professor
  popularity INTEGER -- popularity of the professor
);
CREATE TABLE student (
  student_id INTEGER PRIMARY KEY, -- the unique id to identify students
  f_name TEXT, -- the first name of the student
  l_name TEXT, -- the last name of the student
  gpa REAL, -- grade point average
  type TEXT -- type of the student: UG, TPG or RPG
);
CREATE TABLE ra (
  student_id INTEGER, -- the id number representing each student
  capability INTEGER, -- the capability of student on research
  prof_id INTEGER, -- professor who advises this student
  salary TEXT, -- the salary of this student
  FOREIGN KEY (student_id) REFERENCES student(student_id),
  FOREIGN KEY (prof_id) REFERENCES prof(prof_id)
);
CREATE TABLE course (
  course_id INTEGER PRIMARY KEY, -- unique id of the course
  name TEXT, -- name of the course
  credit INTEGER, -- credit of the course
  diff INTEGER -- difficulty of the course
);
CREATE TABLE registration (
  course_id INTEGER, -- the id of courses
  student_id INTEGER, -- the id of students
  grade TEXT, -- the grade the student got
  sat INTEGER, -- student satisfaction with the course
  FOREIGN KEY (course_id) REFERENCES course(course_id),
  FOREIGN KEY (student_id) REFERENCES student(student_id)
);
INSERT INTO prof VALUES
  (1, 'Bernhard', 'Conkay', 3), (2, 'Hattie', 'Cunningham', 2),
  (3, 'Mateo', 'Ewenson', 3), (4, 'Nathaniel', 'Pigford', 1);
INSERT INTO student VALUES
  (1, 'Ahmed', 'Sukbhans', 2.6, 'RPG'), (2, 'Alvera', 'McQuillin', 3.8, 'UG'),
  (3, 'Amerigo', 'Rabbe', 3.4, 'TPG'), (4, 'Darcy', 'Hatchard', 3.9, 'UG'),
  (5, 'Eba', 'Pesselt', 2.9, 'RPG'), (6, 'Faina', 'Mallinar', 3.5, 'UG'),
  (7, 'Grover', 'Rumbelow', 3.1, 'TPG'), (8, 'Harrison', 'Linger', 3.6, 'UG');
INSERT INTO ra VALUES
  (1, 5, 1, 'high'), (2, 4, 1, 'med'), (3, 5, 3, 'low'), (4, 3, 3, 'free'),
  (5, 5, 2, 'high'), (6, 2, 2, 'med'), (7, 4, 4, 'low'), (8, 5, 4, 'high');
INSERT INTO course VALUES
  (1, 'Machine Learning Theory', 3, 3), (2, 'Intro to Database 1', 2, 4),
  (3, 'Intro to Database 2', 2, 1), (4, 'Natural Language Processing', 3, 3),
  (5, 'Computer Network', 2, 5);
INSERT INTO registration VALUES
  (1, 1, 'A', 5), (1, 2, 'B', 4), (1, 4, 'A', 5), (2, 3, 'C', 3),
  (2, 5, 'B', 4), (2, 6, 'A', 5), (3, 7, 'B', 3), (4, 2, 'A', 4),
  (4, 8, 'C', 2), (4, 6, 'B', 4), (5, 1, 'D', 1), (5, 3, 'A', 5);
";

const SHOP: &str = "
CREATE TABLE customers (
  customer_id INTEGER PRIMARY KEY,
  name TEXT, -- full name
  city TEXT,
  segment TEXT -- consumer, corporate or home_office
);
CREATE TABLE products (
  product_id INTEGER PRIMARY KEY,
  name TEXT,
  category TEXT,
  price REAL -- unit price in euros
);
CREATE TABLE orders (
  order_id INTEGER PRIMARY KEY,
  customer_id INTEGER,
  order_date TEXT, -- ISO date
  status TEXT, -- shipped, pending or cancelled
  FOREIGN KEY (customer_id) REFERENCES customers(customer_id)
);
CREATE TABLE order_items (
  order_id INTEGER,
  product_id INTEGER,
  quantity INTEGER,
  FOREIGN KEY (order_id) REFERENCES orders(order_id),
  FOREIGN KEY (product_id) REFERENCES products(product_id)
);
INSERT INTO customers VALUES
  (1, 'Ana Costa', 'Lisbon', 'consumer'), (2, 'Bruno Dias', 'Porto', 'corporate'),
  (3, 'Carla Reis', 'Lisbon', 'corporate'), (4, 'Duarte Lima', 'Braga', 'consumer'),
  (5, 'Eva Nunes', 'Porto', 'home_office'), (6, 'Filipe Rocha', 'Coimbra', 'consumer');
INSERT INTO products VALUES
  (1, 'Desk Lamp', 'home', 24.5), (2, 'Rust in Action', 'books', 39.0),
  (3, 'SQL Cookbook', 'books', 45.0), (4, 'Headphones', 'electronics', 89.9),
  (5, 'USB Cable', 'electronics', 9.5), (6, 'Notebook', 'stationery', 3.2),
  (7, 'Monitor', 'electronics', 179.0), (8, 'Stapler', 'stationery', 7.8);
INSERT INTO orders VALUES
  (1, 1, '2024-01-05', 'shipped'), (2, 2, '2024-01-05', 'shipped'),
  (3, 1, '2024-01-07', 'cancelled'), (4, 3, '2024-01-08', 'shipped'),
  (5, 4, '2024-01-08', 'pending'), (6, 1, '2024-01-09', 'shipped'),
  (7, 5, '2024-01-10', 'cancelled'), (8, 3, '2024-01-10', 'shipped');
INSERT INTO order_items VALUES
  (1, 2, 1), (1, 5, 2), (2, 4, 1), (3, 7, 1), (4, 3, 2), (4, 6, 5),
  (5, 1, 1), (6, 4, 1), (6, 5, 3), (7, 2, 1), (8, 7, 1), (8, 6, 2);
";

use Difficulty::{Challenging as C, Moderate as M, Simple as S};

type Row = (&'static str, &'static str, Difficulty, &'static str, &'static str, Option<&'static str>);

const TRAIN: [Row; 30] = [
    ("toy_01", "college", S, "What is the first name of the professor with a popularity of 2?", "SELECT first_name FROM prof WHERE popularity = 2", None),
    ("toy_02", "college", M, "Among professors with the highest popularity, how many of their students have research capability of 5?",
     "SELECT COUNT(ra.student_id) AS num_students FROM prof JOIN ra ON prof.prof_id = ra.prof_id WHERE prof.popularity = (SELECT MAX(popularity) FROM prof) AND ra.capability = 5",
     Some("highest popularity refers to MAX(popularity); research capability refers to capability")),
    ("toy_03", "college", S, "How many undergraduate students are there?", "SELECT COUNT(*) FROM student WHERE type = 'UG'", Some("undergraduate refers to type = 'UG'")),
    ("toy_04", "college", S, "List the full names of students with a GPA above 3.5.", "SELECT f_name, l_name FROM student WHERE gpa > 3.5", None),
    ("toy_05", "college", S, "Which courses are worth 3 credits? List them alphabetically.", "SELECT name FROM course WHERE credit = 3 ORDER BY name", None),
    ("toy_06", "college", M, "What are the first names of research assistants with a high salary?",
     "SELECT T2.f_name FROM ra AS T1 JOIN student AS T2 ON T1.student_id = T2.student_id WHERE T1.salary = 'high'", None),
    ("toy_07", "college", M, "How many research assistants does each professor advise? Give the professor's first name.",
     "SELECT T1.first_name, COUNT(T2.student_id) FROM prof AS T1 JOIN ra AS T2 ON T1.prof_id = T2.prof_id GROUP BY T1.prof_id", None),
    ("toy_08", "college", M, "What is the average GPA of students who got an A in at least one course?",
     "SELECT AVG(gpa) FROM student WHERE student_id IN (SELECT student_id FROM registration WHERE grade = 'A')", None),
    ("toy_09", "college", S, "What student types exist?", "SELECT DISTINCT type FROM student", None),
    ("toy_10", "college", M, "Which courses have at least three registered students?",
     "SELECT T1.name FROM course AS T1 JOIN registration AS T2 ON T1.course_id = T2.course_id GROUP BY T1.name HAVING COUNT(T2.student_id) >= 3", None),
    ("toy_11", "college", S, "Who is the student with the best GPA?", "SELECT f_name FROM student ORDER BY gpa DESC LIMIT 1", Some("best GPA refers to MAX(gpa)")),
    ("toy_12", "college", M, "How many students are honors students and how many are regular, where honors means a GPA of at least 3.5?",
     "SELECT CASE WHEN gpa >= 3.5 THEN 'honors' ELSE 'regular' END AS standing, COUNT(*) FROM student GROUP BY standing", None),
    ("toy_13", "college", C, "What is the full name of the professor advising the student with the highest GPA?",
     "SELECT T3.first_name, T3.last_name FROM ra AS T1 JOIN student AS T2 ON T1.student_id = T2.student_id JOIN prof AS T3 ON T1.prof_id = T3.prof_id WHERE T2.gpa = (SELECT MAX(gpa) FROM student)", None),
    ("toy_14", "college", M, "Which course is the most difficult?", "SELECT name FROM course WHERE diff = (SELECT MAX(diff) FROM course)", Some("most difficult refers to MAX(diff)")),
    ("toy_15", "college", M, "Which students either got an A in a course or have research capability 5?",
     "SELECT student_id FROM registration WHERE grade = 'A' UNION SELECT student_id FROM ra WHERE capability = 5", None),
    ("toy_16", "shop", S, "Which customers live in Lisbon?", "SELECT name FROM customers WHERE city = 'Lisbon'", None),
    ("toy_17", "shop", S, "How many orders have been shipped?", "SELECT COUNT(*) FROM orders WHERE status = 'shipped'", None),
    ("toy_18", "shop", S, "List the books and their prices from cheapest to most expensive.", "SELECT name, price FROM products WHERE category = 'books' ORDER BY price", None),
    ("toy_19", "shop", M, "Which customers have a cancelled order?",
     "SELECT T1.name FROM customers AS T1 JOIN orders AS T2 ON T1.customer_id = T2.customer_id WHERE T2.status = 'cancelled'", None),
    ("toy_20", "shop", S, "What is the average price per product category?", "SELECT category, AVG(price) FROM products GROUP BY category", None),
    ("toy_21", "shop", C, "How much has customer 1 spent across all orders?",
     "SELECT SUM(T2.quantity * T3.price) FROM orders AS T1 JOIN order_items AS T2 ON T1.order_id = T2.order_id JOIN products AS T3 ON T2.product_id = T3.product_id WHERE T1.customer_id = 1",
     Some("spent refers to SUM(quantity * price)")),
    ("toy_22", "shop", M, "Which products cost more than the average product?", "SELECT name FROM products WHERE price > (SELECT AVG(price) FROM products)", None),
    ("toy_23", "shop", C, "How many units were sold per product category, from the best selling category down?",
     "SELECT T1.category, SUM(T2.quantity) AS units FROM products AS T1 JOIN order_items AS T2 ON T1.product_id = T2.product_id GROUP BY T1.category ORDER BY units DESC", None),
    ("toy_24", "shop", C, "Who are the two customers with the most orders, and how many orders did each place?",
     "SELECT T1.name, COUNT(T2.order_id) AS n FROM customers AS T1 JOIN orders AS T2 ON T1.customer_id = T2.customer_id GROUP BY T1.customer_id ORDER BY n DESC LIMIT 2", None),
    ("toy_25", "shop", M, "Which products have never been ordered?", "SELECT name FROM products WHERE product_id NOT IN (SELECT product_id FROM order_items)", None),
    ("toy_26", "shop", M, "Which customer segments have more than one customer, and how many customers are in each?",
     "SELECT segment, COUNT(*) FROM customers GROUP BY segment HAVING COUNT(*) > 1", None),
    ("toy_27", "shop", M, "Classify each electronics product as premium or standard, where premium means a price above 50.",
     "SELECT T1.name, CASE WHEN T1.price > 50 THEN 'premium' ELSE 'standard' END FROM products AS T1 WHERE T1.category = 'electronics'", None),
    ("toy_28", "shop", C, "What is the most expensive product in each category?",
     "WITH ranked AS (SELECT category, name, price, RANK() OVER (PARTITION BY category ORDER BY price DESC) AS rk FROM products) SELECT category, name FROM ranked WHERE rk = 1", None),
    ("toy_29", "shop", C, "Which customers either have a shipped order or live in Porto?",
     "SELECT name FROM customers AS T1 WHERE EXISTS (SELECT 1 FROM orders AS T2 WHERE T2.customer_id = T1.customer_id AND T2.status = 'shipped') UNION SELECT name FROM customers WHERE city = 'Porto'", None),
    ("toy_30", "shop", M, "How many orders were placed on each of the first two order dates?",
     "SELECT order_date, COUNT(*) FROM orders GROUP BY order_date ORDER BY order_date LIMIT 2", None),
];

const DEV: [Row; 10] = [
    ("dev_01", "college", S, "What is the last name of the least popular professor?", "SELECT last_name FROM prof WHERE popularity = 1", None),
    ("dev_02", "college", S, "How many courses are worth 2 credits?", "SELECT COUNT(*) FROM course WHERE credit = 2", None),
    ("dev_03", "shop", S, "Which customers live in Porto?", "SELECT name FROM customers WHERE city = 'Porto'", None),
    ("dev_04", "shop", S, "What is the highest product price?", "SELECT MAX(price) FROM products", None),
    ("dev_05", "college", M, "What are the first names of students registered in course 4?",
     "SELECT T2.f_name FROM registration AS T1 JOIN student AS T2 ON T1.student_id = T2.student_id WHERE T1.course_id = 4", None),
    ("dev_06", "college", M, "What is the average GPA per student type?", "SELECT type, AVG(gpa) FROM student GROUP BY type", None),
    ("dev_07", "shop", M, "Which products were ordered at least twice in a single order line?",
     "SELECT T1.name FROM products AS T1 JOIN order_items AS T2 ON T1.product_id = T2.product_id WHERE T2.quantity >= 2", None),
    ("dev_08", "shop", M, "How many orders are there per status?", "SELECT status, COUNT(*) FROM orders GROUP BY status", None),
    ("dev_09", "college", C, "Which professor advises students with the highest average research capability?",
     "SELECT T1.first_name FROM prof AS T1 JOIN ra AS T2 ON T1.prof_id = T2.prof_id GROUP BY T1.prof_id ORDER BY AVG(T2.capability) DESC, T1.prof_id LIMIT 1", None),
    ("dev_10", "shop", C, "Which city generated the most revenue?",
     "SELECT T1.city, SUM(T4.price * T3.quantity) AS revenue FROM customers AS T1 JOIN orders AS T2 ON T1.customer_id = T2.customer_id JOIN order_items AS T3 ON T2.order_id = T3.order_id JOIN products AS T4 ON T3.product_id = T4.product_id GROUP BY T1.city ORDER BY revenue DESC LIMIT 1", None),
];

const SEED_TOY_01: &str = "**Step 1: Identify the required tables and columns**
--

The question asks for a professor's first name given a popularity value, so only the `prof` table is needed, with the columns `first_name` and `popularity`.

**Step 2: Filter professors by popularity**
--

```sql
SELECT first_name
FROM prof
WHERE popularity = 2;
```

This is the final SQL statement that answers the question.
";

const SEED_TOY_02: &str = include_str!("../fixtures/worked_rationale.md");

fn to_instances(rows: &[Row]) -> Vec<TrainInstance> {
    rows.iter()
        .map(|&(id, db, difficulty, question, sql, evidence)| TrainInstance {
            instance_id: id.into(),
            db_id: db.into(),
            question: question.into(),
            gold_sql: sql.into(),
            schema_text: String::new(),
            difficulty,
            evidence: evidence.map(str::to_string),
        })
        .collect()
}

/// The 30 training instances. Schema text is left empty.
pub fn train_corpus() -> Vec<TrainInstance> {
    to_instances(&TRAIN)
}

/// The 10 dev instances: 4 simple, 4 moderate, 2 challenging.
pub fn dev_corpus() -> Vec<TrainInstance> {
    to_instances(&DEV)
}

/// `(instance_id, markdown)` of the seed rationales.
pub fn seeds() -> [(&'static str, &'static str); 2] {
    [("toy_01", SEED_TOY_01), ("toy_02", SEED_TOY_02)]
}

/// Creates `path` and runs `script` on it, replacing any existing file.
pub fn build_database(path: &Path, script: &str) -> Result<(), DemoError> {
    let db_err = |e: rusqlite::Error| DemoError::Database {
        db: path.display().to_string(),
        message: e.to_string(),
    };
    if path.exists() {
        std::fs::remove_file(path).map_err(|source| DemoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    let conn = rusqlite::Connection::open(path).map_err(db_err)?;
    conn.execute_batch(script).map_err(db_err)
}

fn write(path: &Path, text: &str) -> Result<(), DemoError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| DemoError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| DemoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the whole fixture under `root`. Existing fixture files are
/// overwritten; nothing else is touched.
pub fn write_demo(root: &Path) -> Result<DemoLayout, DemoError> {
    let dbs = root.join("dbs");
    std::fs::create_dir_all(&dbs).map_err(|source| DemoError::Io {
        path: dbs.clone(),
        source,
    })?;
    build_database(&dbs.join("college.sqlite"), COLLEGE)?;
    build_database(&dbs.join("shop.sqlite"), SHOP)?;

    let layout = DemoLayout {
        root: root.to_path_buf(),
        registry: root.join("registry.toml"),
        corpus: root.join("corpus.jsonl"),
        seeds_dir: root.join("seeds"),
        dev: root.join("dev.jsonl"),
        baseline_predictions: root.join("predictions_baseline.jsonl"),
        cot_predictions: root.join("predictions_cot.jsonl"),
    };
    write(
        &layout.registry,
        "timeout_secs = 5\n\n[databases]\ncollege = \"dbs/college.sqlite\"\nshop = \"dbs/shop.sqlite\"\n",
    )?;
    write_corpus(&layout.corpus, &train_corpus())?;
    write_corpus(&layout.dev, &dev_corpus())?;
    for (id, md) in seeds() {
        write(&layout.seeds_dir.join(format!("{id}.md")), md)?;
    }

    let dev = dev_corpus();
    // Correct on 3 of 4 simple, 2 of 4 moderate and 1 of 2 challenging.
    let baseline = PredictionFile::from_pairs(dev.iter().filter_map(|i| {
        let p = match i.instance_id.as_str() {
            "dev_04" => "SELECT MIN(price) FROM products".to_string(),
            "dev_07" => "SELECT T1.name FROM products AS T1 JOIN order_items AS T2 ON T1.product_id = T2.product_id WHERE T2.quantity >= 3".to_string(),
            "dev_08" => return None,
            "dev_10" => "SELECT city, SUM(price FROM customers".to_string(),
            _ => i.gold_sql.clone(),
        };
        Some((i.instance_id.clone(), p))
    }))?;
    baseline.save(&layout.baseline_predictions)?;

    let registry = DatabaseRegistry::load(&layout.registry).map_err(|e| DemoError::Database {
        db: "registry".into(),
        message: e.to_string(),
    })?;
    let mut cot_pairs = Vec::new();
    for inst in &dev {
        let mut target = inst.clone();
        if inst.instance_id == "dev_08" {
            target.gold_sql = "SELECT status, COUNT(*) FROM orders WHERE status <> 'pending' GROUP BY status".into();
        }
        let cot = procedural_rationalize(&target, &registry).map_err(|e| DemoError::Database {
            db: inst.db_id.clone(),
            message: e.to_string(),
        })?;
        let md = serialize_cot(&cot).expect("procedural rationales serialize");
        cot_pairs.push((inst.instance_id.clone(), md));
    }
    PredictionFile::from_pairs(cot_pairs)?.save(&layout.cot_predictions)?;
    Ok(layout)
}
