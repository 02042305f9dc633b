// Keyboard-first review flow: A=accept, R=reject, 1-3 pick the rejection
// reason, Enter submits. Keystrokes inside text fields are left alone.

import { REJECTION_REASONS } from './types.js';
import type { RejectionReason, Verdict } from './types.js';

export type KeyAction =
  | { type: 'verdict'; verdict: Verdict }
  | { type: 'reason'; reason: RejectionReason }
  | { type: 'submit' };

export interface KeyEventLike {
  key: string;
  target?: unknown;
}

function isTypingTarget(target: unknown): boolean {
  if (typeof HTMLElement === 'undefined') return false;
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    target instanceof HTMLSelectElement
  );
}

export function actionForKey(event: KeyEventLike): KeyAction | null {
  if (isTypingTarget(event.target)) return null;
  switch (event.key) {
    case 'a':
    case 'A':
      return { type: 'verdict', verdict: 'accept' };
    case 'r':
    case 'R':
      return { type: 'verdict', verdict: 'reject' };
    case '1':
    case '2':
    case '3': {
      const reason = REJECTION_REASONS[Number(event.key) - 1];
      return { type: 'reason', reason };
    }
    case 'Enter':
      return { type: 'submit' };
    default:
      return null;
  }
}
