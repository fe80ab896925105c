// Draft state machine for one annotation task. Pure data in, pure data out;
// the DOM layer renders whatever this module says is active.

export interface QuestionOption {
  label: string;
  value: number;
}

export interface Question {
  key: string;
  prompt: string;
  options: QuestionOption[];
  conditional_on: [string, number] | null;
}

export interface Task {
  task_id: string;
  exchange_id: string;
  iq: string;
  ia: string;
  fq: string;
  template_id: string;
  batch_id: string;
  questions: Question[];
}

export type Answers = Readonly<Record<string, number>>;

export function conditionHolds(question: Question, answers: Answers): boolean {
  if (!question.conditional_on) return true;
  const [dep, trigger] = question.conditional_on;
  return answers[dep] === trigger;
}

/** Questions the annotator must currently see, in template order. */
export function activeQuestions(questions: Question[], answers: Answers): Question[] {
  return questions.filter((q) => conditionHolds(q, answers));
}

/**
 * Drop answers that are no longer allowed: keys outside the template and
 * answers to questions whose condition stopped holding. Clearing one answer
 * can invalidate another, so iterate to a fixed point.
 */
export function prune(questions: Question[], answers: Answers): Answers {
  const known = new Set(questions.map((q) => q.key));
  const current: Record<string, number> = {};
  for (const [key, value] of Object.entries(answers)) {
    if (known.has(key)) current[key] = value;
  }
  let changed = true;
  while (changed) {
    changed = false;
    for (const q of questions) {
      if (q.key in current && !conditionHolds(q, current)) {
        delete current[q.key];
        changed = true;
      }
    }
  }
  return current;
}

/** Record one choice, then re-clear anything the choice made forbidden. */
export function setAnswer(
  questions: Question[],
  answers: Answers,
  key: string,
  value: number,
): Answers {
  const question = questions.find((q) => q.key === key);
  if (!question) throw new Error(`unknown question key ${key}`);
  if (!question.options.some((o) => o.value === value)) {
    throw new Error(`value ${value} not on the scale for ${key}`);
  }
  return prune(questions, { ...answers, [key]: value });
}

/** Every currently-active question answered. */
export function isComplete(questions: Question[], answers: Answers): boolean {
  return activeQuestions(questions, answers).every((q) => q.key in answers);
}

/** First active question still waiting for an answer; shortcut target. */
export function currentQuestion(questions: Question[], answers: Answers): Question | null {
  return activeQuestions(questions, answers).find((q) => !(q.key in answers)) ?? null;
}

/**
 * The answer map that goes on the wire. Built only from active questions, so
 * a key whose condition does not hold cannot appear regardless of how the
 * draft got into its current shape.
 */
export function submissionAnswers(
  questions: Question[],
  answers: Answers,
): Record<string, number> {
  const out: Record<string, number> = {};
  for (const q of activeQuestions(questions, answers)) {
    if (q.key in answers) out[q.key] = answers[q.key];
  }
  return out;
}
