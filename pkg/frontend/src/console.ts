/** Interactive terminal console.
 *
 * Usage: node dist/console.js [--url http://127.0.0.1:8000] [--agent a1] [--role agent]
 *
 * Type a question to ask. After an answer: "u" / "d" for thumbs, or type the
 * next question. After a no-answer the fallback search runs with the question
 * prefilled; type "s <query>" to search again or just ask something else.
 */
import * as readline from "node:readline/promises";
import { GatewayClient } from "./api.js";
import { ConsoleController, ConsoleState } from "./controller.js";

function argValue(flag: string, fallback: string): string {
  const i = process.argv.indexOf(flag);
  const v = i >= 0 ? process.argv[i + 1] : undefined;
  return v ?? fallback;
}

export function render(state: ConsoleState, out: (line: string) => void): void {
  if (state.error) out(`! ${state.error}`);
  switch (state.phase) {
    case "asking":
      out("… asking");
      break;
    case "answered": {
      const answer = state.answer;
      if (!answer) break;
      out(`\n${answer.answer_text}`);
      answer.citations.forEach((c, i) => {
        out(`  [${i + 1}] ${c.title} (${c.origin_id}) ${c.source_uri}`);
      });
      if (state.feedbackSent) out(`feedback recorded: thumbs ${state.feedbackSent}`);
      else out("helpful? u = thumbs up, d = thumbs down");
      break;
    }
    case "fallback": {
      out(`\nno answer found; searching the knowledge base for: ${state.fallbackQuery}`);
      if (state.searchResults.length === 0) out("  (no matching documents)");
      state.searchResults.forEach((h, i) => {
        out(`  ${i + 1}. ${h.title} (${h.origin_id}) - ${h.snippet.slice(0, 80)}`);
      });
      break;
    }
    default:
      break;
  }
}

async function main(): Promise<void> {
  const url = argValue("--url", "http://127.0.0.1:8000");
  const client = new GatewayClient(url, {
    agentId: argValue("--agent", "console"),
    role: argValue("--role", "agent"),
  });
  if (!(await client.health())) {
    console.error(`gateway at ${url} is not healthy`);
    process.exit(1);
  }
  const controller = new ConsoleController(client);
  controller.subscribe((state) => render(state, console.log));

  const rl = readline.createInterface({ input: process.stdin, output: process.stdout });
  console.log(`connected to ${url}; type a question, or "q" to quit`);
  for (;;) {
    const line = (await rl.question("> ")).trim();
    if (line === "q" || line === "quit") break;
    if (line === "u") await controller.sendFeedback("up");
    else if (line === "d") await controller.sendFeedback("down");
    else if (line.startsWith("s ")) await controller.searchFallback(line.slice(2));
    else if (line === "s") await controller.searchFallback();
    else if (line) await controller.ask(line);
  }
  rl.close();
}

const isDirectRun =
  process.argv[1] !== undefined && import.meta.url.endsWith(process.argv[1].split("/").pop() ?? "");
if (isDirectRun) {
  main().catch((err) => {
    console.error(err);
    process.exit(1);
  });
}
