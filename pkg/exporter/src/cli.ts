#!/usr/bin/env node
// avsf-exporter extract --input DIR --output DIR [--fps 3]
// avsf-exporter synth --output DIR [--id synth0000]

import { extractAll } from "./extract";
import { writeSyntheticPair } from "./synth";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${argv[i]}`);
    }
    flags.set(argv[i].slice(2), argv[i + 1]);
  }
  return flags;
}

function usage(): void {
  console.error("usage: avsf-exporter extract --input DIR --output DIR [--fps 3]");
  console.error("       avsf-exporter synth --output DIR [--id synth0000]");
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "extract") {
      const flags = parseFlags(rest);
      const input = flags.get("input");
      const output = flags.get("output");
      if (!input || !output) {
        usage();
        return 1;
      }
      const fps = Number(flags.get("fps") ?? "3");
      if (!(fps > 0)) throw new Error(`--fps must be positive, got ${flags.get("fps")}`);
      const rows = extractAll(input, output, fps);
      console.log(`extracted ${rows.length} clips into ${output} (manifest.csv written)`);
      return 0;
    }
    if (command === "synth") {
      const flags = parseFlags(rest);
      const output = flags.get("output");
      if (!output) {
        usage();
        return 1;
      }
      writeSyntheticPair(output, flags.get("id") ?? "synth0000");
      console.log(`synthetic fixture pair written under ${output}`);
      return 0;
    }
    usage();
    return 1;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
