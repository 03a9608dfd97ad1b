package shapes;

import java.util.List;
import java.util.Map;

/**
 * Geometry helpers.
 */
public class Geometry {
    private static final String OPEN = "{";
    private static final char CLOSE = '}';

    /** Creates an empty geometry. */
    public Geometry() {
    }

    /** Creates a geometry with a scale. */
    public Geometry(double scale) {
        this.scale = scale;
    }

    private double scale;

    /** Area of a square. */
    public double area(double side) {
        return side * side;
    }

    /** Area of a rectangle. */
    public double area(double w, double h) {
        return w * h;
    }

    /**
     * Area of a polygon given its vertices.
     * Uses the shoelace formula.
     */
    public double area(List<double[]> vertices) {
        double sum = 0;
        for (int i = 0; i < vertices.size(); i++) {
            double[] a = vertices.get(i);
            double[] b = vertices.get((i + 1) % vertices.size());
            sum += a[0] * b[1] - b[0] * a[1];
        }
        return Math.abs(sum) / 2;
    }

    @Override
    public String toString() {
        return "Geometry{" + scale + "}";
    }

    /** Larger of two values. */
    @Deprecated
    @SuppressWarnings("unchecked")
    public <T extends Comparable<T>> T max(T a, T b) {
        return a.compareTo(b) >= 0 ? a : b;
    }

    /* plain block comment */
    static int[] range(int n) {
        int[] out = new int[n];
        for (int i = 0; i < n; i++) { out[i] = i; }
        return out;
    }

    // line comment does not attach
    String braces() {
        String s = "}}}{{{";
        char c = '{';
        /* } inside a comment { */
        return s + c;
    }

    String textBlock() {
        return """
            { not a brace "}" }
            """;
    }

    public Map<String, List<Integer>> index(String... keys) throws IllegalStateException, java.io.IOException {
        return null;
    }

    /** Inner point type. */
    public static class Point {
        final int x;
        final int y;

        Point(int x, int y) {
            this.x = x;
            this.y = y;
        }

        /** Manhattan distance. */
        int manhattan(Point other) {
            return Math.abs(x - other.x) + Math.abs(y - other.y);
        }

        class Label {
            String text() { return "(" + x + ", " + y + ")"; }
        }
    }

    interface Visitor {
        void visit(Point p);

        default void visitAll(List<Point> ps) {
            for (Point p : ps) {
                visit(p);
            }
        }
    }

    abstract static class Shape {
        abstract double perimeter();

        /** Twice the perimeter. */
        double doubled() {
            return 2 * perimeter();
        }
    }

    enum Unit {
        METRE(1.0) {
            @Override
            double factor() { return 1.0; }
        },
        FOOT(0.3048);

        private final double f;

        Unit(double f) {
            this.f = f;
        }

        double factor() {
            return f;
        }
    }
}
