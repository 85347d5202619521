//! Prompt templates. Bodies are fixed strings with `{placeholder}` slots;
//! rendering fails on any unbound placeholder so prompts can never silently
//! ship with a hole in them.

use super::GatewayError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    PlanFull,
    PlanNextStep,
    StepToSql,
    FallbackQa,
    FreeFormAnswer,
    JudgeVerification,
    JudgeSimulation,
    JudgeRanking,
}

pub const ALL_TEMPLATES: [TemplateId; 8] = [
    TemplateId::PlanFull,
    TemplateId::PlanNextStep,
    TemplateId::StepToSql,
    TemplateId::FallbackQa,
    TemplateId::FreeFormAnswer,
    TemplateId::JudgeVerification,
    TemplateId::JudgeSimulation,
    TemplateId::JudgeRanking,
];

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PlanFull => "plan_full",
            TemplateId::PlanNextStep => "plan_next_step",
            TemplateId::StepToSql => "step_to_sql",
            TemplateId::FallbackQa => "fallback_qa",
            TemplateId::FreeFormAnswer => "free_form_answer",
            TemplateId::JudgeVerification => "judge_verification",
            TemplateId::JudgeSimulation => "judge_simulation",
            TemplateId::JudgeRanking => "judge_ranking",
        }
    }

    pub fn from_str(s: &str) -> Option<TemplateId> {
        ALL_TEMPLATES.iter().copied().find(|t| t.as_str() == s)
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::PlanFull => PLAN_FULL,
            TemplateId::PlanNextStep => PLAN_NEXT_STEP,
            TemplateId::StepToSql => STEP_TO_SQL,
            TemplateId::FallbackQa => FALLBACK_QA,
            TemplateId::FreeFormAnswer => FREE_FORM_ANSWER,
            TemplateId::JudgeVerification => JUDGE_VERIFICATION,
            TemplateId::JudgeSimulation => JUDGE_SIMULATION,
            TemplateId::JudgeRanking => JUDGE_RANKING,
        }
    }
}

const PLAN_FULL: &str = "\
{in_context_examples}

### Here come to your task!

Table caption: {caption}

/*
{table}
*/

This Table has {num_rows} rows.

{question_label}: {question}

{objective_line}

You MUST think carefully analyze the {question_label} and comprehend it before writing the plan!

Plan Steps: Each step in your plan should be very atomic and straightforward, ensuring they can be easily executed or converted into SQL.

You MUST make sure all conditions (except those mentioned in the table caption) are checked properly in the steps.

Step order: The order of steps is crucial! You must ensure the orders support the correct information retrieval and verification!

The next step will be executed on the output table of the previous step. The first step will be executed on the given Table.

For comparative or superlative {question_label} involving \"highest,\" \"lowest,\" \"earliest,\" \"latest,\" \"better,\" \"faster,\" \"earlier,\" etc., you should order the table accordingly before selecting rows. This ensures that the desired comparative or superlative data is correctly retrieved.

Plan:
";

const PLAN_NEXT_STEP: &str = "\
{in_context_examples}

### Here come to your task!

Table caption: {caption}

/*
{table}
*/

This Table has {num_rows} rows.

{question_label}: {question}

{objective_line}

Previous steps:
{prior_steps}

The table above is the output of the previous step; the next step will be executed on it.

Each step in your plan should be very atomic and straightforward, ensuring they can be easily executed or converted into SQL.

Write ONLY the next step, as a single numbered line. If the previous steps already produce the final answer, reply with DONE.

Next step:
";

const STEP_TO_SQL: &str = "\
{in_context_examples}

Given this table:

/*
{table}
*/

Data types of columns:

{dtype_lines}

Write an SQL command that: {step}

The original table has {num_rows} rows.

Constraints for your SQL:

1. If using SELECT COUNT(*), SUM, MAX, AVG, you MUST use AS to name the new column. If adding new columns, they should be different than columns {existing_cols}.

2. Your SQL command MUST be compatible and executable by Python sqlite3 and pandas.

3. If using FROM, the table to be selected MUST be {table_name}.

SQL is:
";

const FALLBACK_QA: &str = "\
You are given a {question_label} and an Input Table.

Your Task:
{task_lines}

{question_label}: {question}

Input Table Caption: {caption}

/*
{table}
*/
";

const FREE_FORM_ANSWER: &str = "\
You are given a Question, an Input Table, and a Result Table produced by executing a step-by-step plan on the Input Table.

Your Task:
1. Use the Result Table to answer the Question.
2. Your answer must be a single free-form natural language sentence grounded in the Result Table.

Question: {question}

Input Table Caption: {caption}

Result Table:
/*
{result_table}
*/

Answer:
";

const JUDGE_VERIFICATION: &str = "\
The Table Fact Verification (TabFact) model is working on verifying if a given Statement is TRUE or FALSE based on a given input Table.

You are given an HTML file containing a Statement, Input Table, Prediction, and an Explanation clarifying the Prediction.

Your task is to carefully analyze the Explanation and determine whether the Prediction is correct or not.

Explanation Method: {method}

{method_specific_info}

HTML content:
{html_content}

Answer with '{option1}' or '{option2}' only.

You MUST ignore the order of the options and answer based on the correctness of the Prediction!
";

const JUDGE_SIMULATION: &str = "\
Given an input statement, an Artificial Intelligence (AI) model will output either TRUE or FALSE.
Your job in this Simulation task is to use the AI's explanation to guess the machine response.
Specifically, please choose which response (TRUE/FALSE) model would output regardless of whether you think that response is correct or not.

Explanation:
{text_content}

Based on this explanation, guess what the model will predict on the Statement based on the provided explanation.
Answer with only `TRUE' or `FALSE':
";

const JUDGE_RANKING: &str = "\
You are given explanations from four different methods for the same table fact verification task.
Please rank these explanations based on their clarity, coherence, and helpfulness in understanding the model's reasoning.

Clarity Definition: How easy is the explanation to understand? Is the language clear and straightforward?

Coherence Definition: Does the explanation logically flow and make sense as a whole? Are the ideas well-connected?

Helpfulness in Understanding the Model's Reasoning Definition: How effectively does the explanation help you understand why the model made its decision? Does it reveal the reasoning process?

Provide the ranking from best to worst.

Explanations:

{explanations}
";

/// In-context examples for full-plan and next-step planning, one flavor for
/// statement verification and one for question answering.
pub const PLAN_EXAMPLE_STATEMENT: &str = "\
Table: 2005 tournament results

/*
col : id | name | hometown | score
row 1 : 1 | alice | new york | 85
row 2 : 2 | bob | los angeles | 90
row 3 : 3 | charlie | chicago | 75
row 4 : 4 | dave | new york | 88
row 5 : 5 | eve | los angeles | 92
*/

Statement: in 2005 tournament, bob and charlie are both from chicago.

Plan:
1. Select rows where the `name' is `bob' or `charlie'.
2. Select rows where `hometown' is `chicago'.
3. Use a CASE statement to return TRUE if the number of rows is equal to 2, otherwise return FALSE.";

pub const PLAN_EXAMPLE_QUESTION: &str = "\
Table: 2005 tournament results

/*
col : id | name | hometown | score
row 1 : 1 | alice | new york | 85
row 2 : 2 | bob | los angeles | 90
row 3 : 3 | charlie | chicago | 75
*/

Question: which players are from chicago?

Plan:
1. Select rows where the `hometown' is `chicago'.
2. Select the `name' column.";

pub const SQL_EXAMPLE: &str = "\
Given this table:

/*
col : id | name | department | salary | years
row 1 : 1 | alice | it | 95000 | 3
row 2 : 2 | bob | finance | 105000 | 5
row 3 : 3 | charlie | marketing | 88000 | 2
*/

Write an SQL command that: Select rows where the `salary' is greater than 100000.

SQL is:
SELECT *
FROM table_sql
WHERE salary > 100000;
-- Select rows where the `salary' is greater than 100000.";

/// Per-method blurbs shown to ranking judges for the methods they know about.
pub fn method_description(method: &str) -> Option<&'static str> {
    match method {
        "DATER" => Some(
            "DATER is a method that focuses on selecting relevant information from the input table and providing contextual information to support the statement verification process.
The explanation contains:

1. Sub-table Selection: DATER selects a sub-table from the original input Table that is relevant to the Statement.

2. Contextual Information: DATER provides contextual information that is fact-checked against the Table.",
        ),
        "COT" => Some(
            "COT is a method that breaks down the question-answering process into a series of intermediate tables. Each step in the chain represents a specific operation on the table, leading to the final answer.
The explanation contains:

1. Step Descriptions: Each step is accompanied by a function with arguments, providing context for the transformation.

2. Intermediate Tables: We display the intermediate tables resulting from each function, showing the state of the data at each step.

3. Row and Column Highlighting: Rows and Columns used in the current step are highlighted with background-color:yellow.",
        ),
        "Text2SQL" => Some(
            "Text2SQL is a method that translates the natural language question into a single SQL query. The SQL query itself serves as the explanation for how the system arrives at its answer.
The explanation contains:
The generated SQL command that will be directly applied onto the table to generate the final answer.",
        ),
        "POS" => Some(
            "POS is a Table QA method that breaks down the question-answering process into a series of natural-language steps. Each step represents a specific operation on the table, leading to the final answer.
The explanation contains:

1. Step Descriptions: Each step is accompanied by a natural-language description of the atomic step performed, providing context for the transformation.

2. Intermediate Tables: We display the intermediate tables resulting from each step, showing the state of the data at each step.

3. Attribution Maps: We highlight the the rows, columns, and cells involved in each table transformation over intermediate tables.
Row and Column Highlighting: Rows and Columns used in the current step are highlighted with background-color:yellow.
Cell Highlighting: Cells that directly match the conditions in the current step are highlighted with background-color:90EE90.",
        ),
        _ => None,
    }
}

fn placeholder_at(body: &str, i: usize) -> Option<(&str, usize)> {
    let rest = &body[i + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    if name.is_empty()
        || !name.chars().next().unwrap().is_ascii_lowercase()
        || !name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        return None;
    }
    Some((name, i + 1 + close + 1))
}

/// Renders a template by substituting `{placeholder}` slots from the
/// bindings in a single pass (substituted text is never re-scanned). Fails if
/// any placeholder has no binding.
pub fn render_prompt(
    template_id: TemplateId,
    bindings: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    let body = template_id.body();
    let mut out = String::with_capacity(body.len());
    let mut i = 0;
    while let Some(off) = body[i..].find('{') {
        let at = i + off;
        out.push_str(&body[i..at]);
        match placeholder_at(body, at) {
            Some((name, after)) => {
                let value = bindings.get(name).ok_or_else(|| GatewayError::Template {
                    template: template_id.as_str(),
                    placeholder: name.to_string(),
                })?;
                out.push_str(value);
                i = after;
            }
            None => {
                out.push('{');
                i = at + 1;
            }
        }
    }
    out.push_str(&body[i..]);
    Ok(out)
}
