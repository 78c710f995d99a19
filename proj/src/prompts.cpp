#include "icegraph/prompts.hpp"

#include <stdexcept>

#include "icegraph/errors.hpp"

namespace icegraph {

namespace {

const std::string kMathFrrHeader = R"ICE(Translate the given calculations into code form. Each line of code MUST follow the format specified below:
output_variable = [description of operation](input_variable_1, ..., input_variable_n))ICE";

const std::string kProofFrrHeader = R"ICE(Formalize the following proof process based on the given information. Where Each line of formalized proof MUST follow the format specified below.
output_triple = [rule used](input_triple_1, ... , input_triple_n))ICE";

const std::vector<FrrExemplar> kGsm8kExemplars = {{
    R"ICE(You can buy 4 apples or 1 watermelon for the same price. You bought 36 fruits evenly split between oranges, apples and watermelons, and the price of 1 orange is $0.50. How much does 1 apple cost if your total bill was $66?)ICE",
    R"ICE(If 36 fruits were evenly split between 3 types of fruits, then I bought 36/3 = <<36/3=12>>12 units of each 
fruit
If 1 orange costs $0.50 then 12 oranges will cost $0.50 * 12 = $<<0.5*12=6>>6
If my total bill was $66 and I spent $6 on oranges then I spent $66 - $6 = $<<66-6=60>>60 on the other 2 fruit types.
Assuming the price of watermelon is W, and knowing that you can buy 4 apples for the same price and that the price 
of one apple is A, then 1W=4A
If we know we bought 12 watermelons and 12 apples for $60, then we know that $60 = 12W + 12A
Knowing that 1W=4A, then we can convert the above to $60 = 12(4A) + 12A
$60 = 48A + 12A
$60 = <<60=60>>60A
Then we know the price of one apple (A) is $60/60= $<<60/60=1>>1
#### 1)ICE",
    R"ICE(total_fruits = 36
types_of_fruits = 3
price_per_orange = 0.50
total_oranges = 12
total_bill = 66
equivalent_apples_for_watermelon = 4
total_apples_and_watermelons = 12
fruits_per_type = [divide](total_fruits, types_of_fruits)
cost_of_oranges = [multiply](total_oranges, price_per_orange)
remaining_budget = [minus](total_bill, cost_of_oranges)
price_per_apple = [construct and solve an equation](total_apples_and_watermelons, equivalent_apples_for_watermelon, remaining_budget))ICE",
}};

const std::vector<FrrExemplar> kAquaExemplars = {{
    R"ICE(In a group of 6 boys and 4 girls, four children are to be selected. In how many different ways can they be selected such that at least one boy should be there?
Options: A)209, B)210, C)211, D)213, E)215)ICE",
    R"ICE(To determine the number of ways to select 4 children from a group of 6 boys and 4 girls such that at least one boy is included, we will use the method of complement counting.

First, let's calculate the total number of ways to select 4 children from 10 children (6 boys + 4 girls):

\[
\binom{10}{4} = \frac{10!}{4!(10-4)!} = \frac{10 \times 9 \times 8 \times 7}{4 \times 3 \times 2 \times 1} = 210
\]

Next, we calculate the number of ways to select 4 children with no boys, i.e., all girls. Since there are only 4 girls, and we need to select all 4 of them:

\[
\binom{4}{4} = 1
\]

Now, subtract the number of ways to select all girls from the total number of ways to select 4 children to find the number of ways that include at least one boy:

\[
\binom{10}{4} - \binom{4}{4} = 210 - 1 = 209
\]

Thus, the number of ways to select 4 children with at least one boy is:

\[
\boxed{209}
\]
#### A)ICE",
    R"ICE(total_children = 10
children_to_select = 4
boys = 6
girls = 4
total_ways_to_select = [combination](total_children, children_to_select)
all_girls_selection = [combination](girls, children_to_select)
ways_with_at_least_one_boy = [subtract](total_ways_to_select, all_girls_selection))ICE",
}};

const std::vector<FrrExemplar> kProofWriterExemplars = {{
    R"ICE(Triples:
1. Anne is not big.
2. Anne is cold.
3. Anne is red.
4. Dave is green.
5. Dave is rough.
6. Erin is green.
7. Erin is kind.
8. Erin is rough.
9. Fiona is green.
10. Fiona is not nice.
Rules:
1. If Erin is cold then Erin is rough.
2. If something is rough then it is nice.
3. All green, big things are kind.
4. If Dave is kind then Dave is cold.
5. If something is green and not rough then it is big.
6. All nice, rough things are big.
7. If Dave is cold and Dave is nice then Dave is red.
Based on the above information, is the following statement true or false? Dave is red.
A) True B) False)ICE",
    R"ICE(To determine if the statement "Dave is red" is true or false, let's evaluate the given information step by step:

From the triples:
1. Dave is green.
2. Dave is rough.

From the rules:
1. If something is rough then it is nice. (Dave is rough, so Dave is nice.)
2. If Dave is cold and Dave is nice then Dave is red. (However, there's no information saying Dave is cold, so we can't use this rule directly.)
3. All nice, rough things are big. (Dave is nice and rough, so Dave is big.)

Now, we need to verify whether Dave being cold can be derived:
1. If Dave is kind then Dave is cold. (To use this, we need to verify if Dave is kind.)
   - All green, big things are kind. (Dave is green and big, so Dave is kind.)
   - Hence, Dave is kind, which according to rule 4, makes Dave cold.

Since now we know:
- Dave is cold.
- Dave is nice.

We can use rule 7:
- If Dave is cold and Dave is nice then Dave is red.

Since both conditions are satisfied, Dave is red.

The statement "Dave is red" is **True (A)**.)ICE",
    R"ICE("Dave is nice." = [rule2]("Dave is rough.")
"Dave is big." = [rule6]("Dave is nice.", "Dave is rough.")
"Dave is kind." = [rule3]("Dave is green.", "Dave is big.")
"Dave is cold." = [rule4]("Dave is kind.")
"Dave is red." = [rule7]("Dave is cold.", "Dave is nice."))ICE",
}};

const std::vector<FrrExemplar> kNoExemplars;

}  // namespace

const std::string& frr_prompt_header(Task task) {
    switch (task) {
        case Task::Gsm8k:
        case Task::Aqua:
            return kMathFrrHeader;
        case Task::ProofWriter:
            return kProofFrrHeader;
        case Task::Mbpp:
            break;
    }
    throw TemplateError("no reasoning-representation prompt for task " + task_name(task));
}

const std::string& frr_code_marker(Task task) {
    static const std::string kCode = "Code:";
    static const std::string kProof = "Formalized Proof:";
    switch (task) {
        case Task::Gsm8k:
        case Task::Aqua:
            return kCode;
        case Task::ProofWriter:
            return kProof;
        case Task::Mbpp:
            break;
    }
    throw TemplateError("no reasoning-representation marker for task " + task_name(task));
}

const std::string& frr_answer_marker(Task task) {
    static const std::string kAnswer = "A:";
    static const std::string kProof = "Proof:";
    return task == Task::ProofWriter ? kProof : kAnswer;
}

const std::vector<FrrExemplar>& default_frr_exemplars(Task task) {
    switch (task) {
        case Task::Gsm8k:
            return kGsm8kExemplars;
        case Task::Aqua:
            return kAquaExemplars;
        case Task::ProofWriter:
            return kProofWriterExemplars;
        case Task::Mbpp:
            return kNoExemplars;
    }
    return kNoExemplars;
}

}  // namespace icegraph
